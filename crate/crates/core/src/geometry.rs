//! Uniform space-time grid, interval subdomains, node-range set algebra and
//! smooth cutoff functions.
//!
//! Subdomains are open intervals `(lo, hi)` of `(0, L)`. Every relation the
//! hypotheses need (intersection, difference, compact inclusion) is computed
//! on inclusive ranges of interior node indices; node `j` (0-based) sits at
//! `x = (j + 1) h`.

use serde::Serialize;
use thiserror::Error;

use crate::coupling::CouplingTree;
use crate::validation::{Check, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-positive dimension: {0}")]
    NonPositiveDimension(&'static str),
    #[error("grid too coarse: need Nx >= 3 and Nt >= 2 (got Nx = {nx}, Nt = {nt})")]
    TooCoarse { nx: usize, nt: usize },
    #[error("interval ({lo}, {hi}) is not an open subinterval of (0, {length})")]
    InvalidInterval { lo: f64, hi: f64, length: f64 },
    #[error("interval ({lo}, {hi}) holds {count} grid nodes, at least 3 are required")]
    TooFewNodes { lo: f64, hi: f64, count: usize },
    #[error("inner interval must sit inside the outer one with at least one cell of margin")]
    MarginTooSmall,
    #[error("family shape mismatch: {0}")]
    FamilyShape(String),
}

/// Uniform grid on `(0, L) x (0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub length: f64,
    pub nx: usize,
    pub horizon: f64,
    pub nt: usize,
    pub h: f64,
    pub tau: f64,
}

impl Grid {
    pub fn new(length: f64, nx: usize, horizon: f64, nt: usize) -> Result<Self, GeometryError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(GeometryError::NonPositiveDimension("L"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(GeometryError::NonPositiveDimension("T"));
        }
        if nx < 3 || nt < 2 {
            return Err(GeometryError::TooCoarse { nx, nt });
        }
        Ok(Self {
            length,
            nx,
            horizon,
            nt,
            h: length / (nx as f64 + 1.0),
            tau: horizon / nt as f64,
        })
    }

    /// Coordinate of interior node `j` (0-based).
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 + 1.0) * self.h
    }

    /// Time level `m`, `m = 0..=Nt`.
    #[inline]
    pub fn t(&self, m: usize) -> f64 {
        m as f64 * self.tau
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    /// Discrete L² inner product `h Σ a_j b_j`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        self.h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Space-time inner product `tau h Σ_m Σ_j a b` over the given time levels.
    pub fn spacetime_inner<'a>(
        &self,
        levels: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    ) -> f64 {
        self.tau
            * levels
                .into_iter()
                .map(|(a, b)| self.inner(a, b))
                .sum::<f64>()
    }

    /// Half a part per billion of a cell; keeps membership of nodes that sit
    /// exactly on an endpoint deterministic.
    #[inline]
    fn snap(&self) -> f64 {
        1e-9 * self.h
    }

    /// Whether node `j` lies in the open interval `(lo, hi)`.
    #[inline]
    pub fn node_in(&self, j: usize, lo: f64, hi: f64) -> bool {
        let x = self.x(j);
        x > lo + self.snap() && x < hi - self.snap()
    }
}

/// Inclusive range of node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeRange {
    pub first: usize,
    pub last: usize,
}

impl NodeRange {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, j: usize) -> bool {
        j >= self.first && j <= self.last
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

/// Finite union of disjoint, non-adjacent node ranges, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RangeSet {
    ranges: Vec<NodeRange>,
}

impl RangeSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_range(r: NodeRange) -> Self {
        Self { ranges: vec![r] }
    }

    fn from_sorted(mut ranges: Vec<NodeRange>) -> Self {
        // merge adjacent / overlapping pieces
        ranges.sort_by_key(|r| r.first);
        let mut out: Vec<NodeRange> = Vec::with_capacity(ranges.len());
        for r in ranges {
            match out.last_mut() {
                Some(prev) if r.first <= prev.last + 1 => prev.last = prev.last.max(r.last),
                _ => out.push(r),
            }
        }
        Self { ranges: out }
    }

    pub fn ranges(&self) -> &[NodeRange] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn count(&self) -> usize {
        self.ranges.iter().map(NodeRange::len).sum()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.ranges.iter().any(|r| r.contains(j))
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().flat_map(|r| r.iter())
    }

    pub fn intersect(&self, other: &RangeSet) -> RangeSet {
        let mut out = Vec::new();
        for a in &self.ranges {
            for b in &other.ranges {
                let first = a.first.max(b.first);
                let last = a.last.min(b.last);
                if first <= last {
                    out.push(NodeRange { first, last });
                }
            }
        }
        Self::from_sorted(out)
    }

    pub fn subtract(&self, other: &RangeSet) -> RangeSet {
        let mut current = self.ranges.clone();
        for b in &other.ranges {
            let mut next = Vec::with_capacity(current.len() + 1);
            for a in current {
                if b.last < a.first || b.first > a.last {
                    next.push(a);
                    continue;
                }
                if b.first > a.first {
                    next.push(NodeRange {
                        first: a.first,
                        last: b.first - 1,
                    });
                }
                if b.last < a.last {
                    next.push(NodeRange {
                        first: b.last + 1,
                        last: a.last,
                    });
                }
            }
            current = next;
        }
        Self::from_sorted(current)
    }

    pub fn union(&self, other: &RangeSet) -> RangeSet {
        let mut all = self.ranges.clone();
        all.extend_from_slice(&other.ranges);
        Self::from_sorted(all)
    }

    /// Discrete `inner ⊂⊂ self`: the inner range fits inside one component
    /// with at least one node of margin on each side.
    pub fn compactly_contains(&self, inner: NodeRange) -> bool {
        self.ranges
            .iter()
            .any(|r| r.first < inner.first && inner.last < r.last)
    }

    pub fn as_pairs(&self) -> Vec<(usize, usize)> {
        self.ranges.iter().map(|r| (r.first, r.last)).collect()
    }
}

/// Open interval `(lo, hi)` together with the nodes it contains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Subdomain {
    pub lo: f64,
    pub hi: f64,
    pub nodes: NodeRange,
}

impl Subdomain {
    pub fn new(grid: &Grid, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        let tol = grid.snap();
        if !(lo >= -tol && lo < hi && hi <= grid.length + tol) {
            return Err(GeometryError::InvalidInterval {
                lo,
                hi,
                length: grid.length,
            });
        }
        let mut first = ((lo / grid.h).floor().max(0.0) as usize).saturating_sub(1);
        while first < grid.nx && !grid.node_in(first, lo, hi) {
            first += 1;
        }
        let mut count = 0;
        while first + count < grid.nx && grid.node_in(first + count, lo, hi) {
            count += 1;
        }
        if count < 3 {
            return Err(GeometryError::TooFewNodes { lo, hi, count });
        }
        Ok(Self {
            lo,
            hi,
            nodes: NodeRange {
                first,
                last: first + count - 1,
            },
        })
    }

    pub fn whole(grid: &Grid) -> Result<Self, GeometryError> {
        Self::new(grid, 0.0, grid.length)
    }

    pub fn set(&self) -> RangeSet {
        RangeSet::from_range(self.nodes)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Discrete compact inclusion `self ⊂⊂ outer`.
    pub fn compactly_inside(&self, outer: &Subdomain) -> bool {
        outer.set().compactly_contains(self.nodes)
    }

    /// 0/1 indicator of the node range.
    pub fn indicator(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.nx)
            .map(|j| if self.nodes.contains(j) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Control region plus the per-component observation subdomains.
///
/// `omega` has one entry per driven component (1..=n); `omega_under` and
/// `omega_tilde` have one per component (0..=n).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubdomainFamily {
    pub omega0: Subdomain,
    pub omega: Vec<Subdomain>,
    pub omega_under: Vec<Subdomain>,
    pub omega_tilde: Vec<Subdomain>,
}

impl SubdomainFamily {
    pub fn new(
        omega0: Subdomain,
        omega: Vec<Subdomain>,
        omega_under: Vec<Subdomain>,
        omega_tilde: Vec<Subdomain>,
    ) -> Result<Self, GeometryError> {
        let n = omega.len();
        if omega_under.len() != n + 1 || omega_tilde.len() != n + 1 {
            return Err(GeometryError::FamilyShape(format!(
                "expected {} entries in omega_under/omega_tilde, got {}/{}",
                n + 1,
                omega_under.len(),
                omega_tilde.len()
            )));
        }
        for (j, (t, u)) in omega_tilde.iter().zip(&omega_under).enumerate() {
            if !t.compactly_inside(u) {
                return Err(GeometryError::FamilyShape(format!(
                    "omega_tilde[{j}] is not compactly inside omega_under[{j}]"
                )));
            }
        }
        Ok(Self {
            omega0,
            omega,
            omega_under,
            omega_tilde,
        })
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    /// `ω_i` for `i = 1..=n`.
    pub fn driven(&self, i: usize) -> &Subdomain {
        &self.omega[i - 1]
    }

    /// `ω_0` for index 0, `ω_i` otherwise.
    pub fn omega_any(&self, i: usize) -> &Subdomain {
        if i == 0 {
            &self.omega0
        } else {
            self.driven(i)
        }
    }

    /// `(ω_i ∩ ω_0) \ ⋃_{j≠0,i} ω_j`, the set where only `z_i` is fed.
    pub fn star_exclusive_region(&self, i: usize) -> RangeSet {
        let mut region = self.driven(i).set().intersect(&self.omega0.set());
        for j in 1..=self.n() {
            if j != i {
                region = region.subtract(&self.driven(j).set());
            }
        }
        region
    }

    /// `D_i = ω_i ∩ ω_{k(i)} ∩ … ∩ ω_0` along the ancestor chain.
    pub fn tree_chain_intersection(&self, tree: &CouplingTree, i: usize) -> RangeSet {
        let mut set = self.driven(i).set();
        let mut node = i;
        while node != 0 {
            node = tree.parent(node);
            set = set.intersect(&self.omega_any(node).set());
        }
        set
    }

    /// `D_i \ ⋃_{j≠i, k(j)=k(i)} ω_j`.
    pub fn tree_exclusive_region(&self, tree: &CouplingTree, i: usize) -> RangeSet {
        let parent = tree.parent(i);
        let mut region = self.tree_chain_intersection(tree, i);
        for j in tree.children(parent) {
            if j != i {
                region = region.subtract(&self.driven(j).set());
            }
        }
        region
    }
}

fn tilde_checks(fam: &SubdomainFamily, report: &mut ValidationReport) {
    for (j, (t, u)) in fam.omega_tilde.iter().zip(&fam.omega_under).enumerate() {
        report.push(Check::new("tilde_in_under", Some(j), t.compactly_inside(u)));
    }
}

/// Star hypotheses: `(ω_i∩ω_0)\⋃_{j≠0,i}ω_j ≠ ∅` and `ω̲_i ⊂⊂` that set.
pub fn check_star_hypotheses(fam: &SubdomainFamily) -> ValidationReport {
    let mut report = ValidationReport::new();
    for i in 1..=fam.n() {
        let region = fam.star_exclusive_region(i);
        let nonempty = !region.is_empty();
        let mut check = Check::new("exclusive_region_nonempty", Some(i), nonempty);
        if nonempty {
            check = check.with_witness(region.as_pairs());
        }
        report.push(check);

        let under = fam.omega_under[i];
        let inside = region.compactly_contains(under.nodes);
        let mut check = Check::new("under_in_exclusive_region", Some(i), inside);
        if inside {
            check = check.with_witness(vec![(under.nodes.first, under.nodes.last)]);
        }
        report.push(check);
    }
    tilde_checks(fam, &mut report);
    report
}

/// Tree hypotheses: nonempty chain intersections `D_i`, sibling exclusion,
/// `ω̲_i` placement and the nesting chain `ω̲_i ⊂⊂ ω̲_{k(i)} ⊂⊂ ω̲_0 ⊂⊂ ω_0`.
pub fn check_tree_hypotheses(fam: &SubdomainFamily, tree: &CouplingTree) -> ValidationReport {
    let mut report = ValidationReport::new();
    if fam.n() != tree.n() {
        report.push(
            Check::new("family_matches_tree", None, false)
                .with_detail(format!("family has n = {}, tree has n = {}", fam.n(), tree.n())),
        );
        return report;
    }
    report.push(Check::new(
        "under0_in_omega0",
        Some(0),
        fam.omega_under[0].compactly_inside(&fam.omega0),
    ));
    for i in 1..=fam.n() {
        let d = fam.tree_chain_intersection(tree, i);
        let mut check = Check::new("chain_intersection_nonempty", Some(i), !d.is_empty());
        if !d.is_empty() {
            check = check.with_witness(d.as_pairs());
        }
        report.push(check);

        let excl = fam.tree_exclusive_region(tree, i);
        let mut check = Check::new("sibling_exclusion_nonempty", Some(i), !excl.is_empty());
        if !excl.is_empty() {
            check = check.with_witness(excl.as_pairs());
        }
        report.push(check);

        let under = fam.omega_under[i];
        report.push(Check::new(
            "under_in_exclusive_region",
            Some(i),
            excl.compactly_contains(under.nodes),
        ));
        let parent = tree.parent(i);
        report.push(
            Check::new(
                "under_in_parent_under",
                Some(i),
                under.compactly_inside(&fam.omega_under[parent]),
            )
            .with_detail(format!("parent {parent}")),
        );
        report.push(Check::new(
            "under_in_root_under",
            Some(i),
            under.compactly_inside(&fam.omega_under[0]),
        ));
    }
    tilde_checks(fam, &mut report);
    report
}

/// Quintic smoothstep `6u⁵ − 15u⁴ + 10u³`, C² with flat ends.
#[inline]
pub fn smoothstep5(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    (u * u * u * (10.0 + u * (-15.0 + 6.0 * u))).min(1.0)
}

/// Cutoff γ: zero outside `under`, equal to `sign` on the closure of `tilde`,
/// quintic smoothstep flanks in between.
pub fn build_cutoff(
    grid: &Grid,
    under: &Subdomain,
    tilde: &Subdomain,
    sign: f64,
) -> Result<Vec<f64>, GeometryError> {
    if !tilde.compactly_inside(under) || !(tilde.lo > under.lo && tilde.hi < under.hi) {
        return Err(GeometryError::MarginTooSmall);
    }
    let sign = if sign < 0.0 { -1.0 } else { 1.0 };
    Ok((0..grid.nx)
        .map(|j| {
            if !under.nodes.contains(j) {
                return 0.0;
            }
            let x = grid.x(j);
            let v = if x < tilde.lo {
                smoothstep5((x - under.lo) / (tilde.lo - under.lo))
            } else if x > tilde.hi {
                smoothstep5((under.hi - x) / (under.hi - tilde.hi))
            } else {
                1.0
            };
            sign * v
        })
        .collect())
}
