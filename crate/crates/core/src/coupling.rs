//! Coupling graph, coefficient fields and their class check, and the
//! constant-coefficient Kalman analysis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{build_cutoff, GeometryError, Grid, SubdomainFamily};
use crate::validation::{Check, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("k({node}) = {node}: a component cannot feed itself")]
    SelfLoop { node: usize },
    #[error("orbit of {node} under k never reaches 0 (revisits {revisited})")]
    CyclicCoupling { node: usize, revisited: usize },
    #[error("k({node}) = {target} is outside 0..={n}")]
    OutOfRange { node: usize, target: usize, n: usize },
    #[error("coefficient set has {got} components, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The map `k: {1..n} -> {0..n}` with depths `m(i)`, `(k∘)^{m(i)}(i) = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouplingTree {
    k: Vec<usize>,
    depth: Vec<usize>,
}

impl CouplingTree {
    /// `raw[i-1] = k(i)`.
    pub fn validate(raw: &[usize]) -> Result<Self, CouplingError> {
        let n = raw.len();
        for (idx, &target) in raw.iter().enumerate() {
            let node = idx + 1;
            if target > n {
                return Err(CouplingError::OutOfRange { node, target, n });
            }
            if target == node {
                return Err(CouplingError::SelfLoop { node });
            }
        }
        let mut depth = Vec::with_capacity(n);
        for start in 1..=n {
            let mut seen = vec![false; n + 1];
            let mut node = start;
            let mut steps = 0;
            while node != 0 {
                if seen[node] || steps >= n {
                    return Err(CouplingError::CyclicCoupling {
                        node: start,
                        revisited: node,
                    });
                }
                seen[node] = true;
                node = raw[node - 1];
                steps += 1;
            }
            depth.push(steps);
        }
        Ok(Self {
            k: raw.to_vec(),
            depth,
        })
    }

    pub fn star(n: usize) -> Self {
        Self {
            k: vec![0; n],
            depth: vec![1; n],
        }
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn parent(&self, i: usize) -> usize {
        self.k[i - 1]
    }

    /// `m(i)`; the root has depth 0.
    pub fn depth(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.depth[i - 1]
        }
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    /// `I_j = {l : k(l) = j}`, increasing.
    pub fn children(&self, j: usize) -> Vec<usize> {
        (1..=self.n()).filter(|&l| self.parent(l) == j).collect()
    }

    pub fn is_star(&self) -> bool {
        self.k.iter().all(|&p| p == 0)
    }

    /// All components, root first, then by increasing depth (ties by index).
    /// Parents always precede children.
    pub fn root_first_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..=self.n()).collect();
        order.sort_by_key(|&i| (self.depth(i), i));
        order
    }

    /// Whether `j` lies on the path from `i` to the root (inclusive of `i`).
    pub fn is_ancestor_or_self(&self, j: usize, i: usize) -> bool {
        let mut node = i;
        loop {
            if node == j {
                return true;
            }
            if node == 0 {
                return false;
            }
            node = self.parent(node);
        }
    }
}

/// Scalar field on all `(Nt+1) x Nx` grid points, time-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeField {
    nx: usize,
    levels: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            nx: grid.nx,
            levels: grid.nt + 1,
            data: vec![value; grid.nx * (grid.nt + 1)],
        }
    }

    /// Time-independent field.
    pub fn from_spatial(grid: &Grid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.nx);
        let mut data = Vec::with_capacity(grid.nx * (grid.nt + 1));
        for _ in 0..=grid.nt {
            data.extend_from_slice(values);
        }
        Self {
            nx: grid.nx,
            levels: grid.nt + 1,
            data,
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.nx * (grid.nt + 1));
        for m in 0..=grid.nt {
            for j in 0..grid.nx {
                data.push(f(m, j));
            }
        }
        Self {
            nx: grid.nx,
            levels: grid.nt + 1,
            data,
        }
    }

    #[inline]
    pub fn at(&self, m: usize, j: usize) -> f64 {
        self.data[m * self.nx + j]
    }

    #[inline]
    pub fn level(&self, m: usize) -> &[f64] {
        &self.data[m * self.nx..(m + 1) * self.nx]
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            nx: self.nx,
            levels: self.levels,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn fold_nodes(&self, mut keep: impl FnMut(usize) -> bool, init: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut acc = init;
        for m in 0..self.levels {
            for j in 0..self.nx {
                if keep(j) {
                    acc = f(acc, self.at(m, j));
                }
            }
        }
        acc
    }
}

/// Coupling coefficients `a_{i,k(i)}` (`a[i-1]`) and reaction coefficients
/// `c_j` (`c[j]`), with the class parameters they were declared against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSet {
    pub a: Vec<SpaceTimeField>,
    pub c: Vec<SpaceTimeField>,
    pub m_bound: f64,
    pub delta: f64,
}

impl CoefficientSet {
    pub fn new(
        a: Vec<SpaceTimeField>,
        c: Vec<SpaceTimeField>,
        m_bound: f64,
        delta: f64,
    ) -> Result<Self, CouplingError> {
        if c.len() != a.len() + 1 {
            return Err(CouplingError::Shape {
                expected: a.len() + 1,
                got: c.len(),
            });
        }
        Ok(Self {
            a,
            c,
            m_bound,
            delta,
        })
    }

    pub fn zeros(grid: &Grid, n: usize) -> Self {
        Self {
            a: vec![SpaceTimeField::zeros(grid); n],
            c: vec![SpaceTimeField::zeros(grid); n + 1],
            m_bound: 0.0,
            delta: 0.0,
        }
    }

    /// Constant fields on all of `Q`, as in the Kalman counterexamples.
    pub fn constant(grid: &Grid, a: &[f64], c: &[f64]) -> Result<Self, CouplingError> {
        let m_bound = a.iter().chain(c).fold(0.0f64, |m, v| m.max(v.abs()));
        let delta = a.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        Self::new(
            a.iter().map(|&v| SpaceTimeField::constant(grid, v)).collect(),
            c.iter().map(|&v| SpaceTimeField::constant(grid, v)).collect(),
            m_bound,
            if delta.is_finite() { delta } else { 0.0 },
        )
    }

    /// `a_{i,k(i)} = height_i · γ(ω_i, ω̲_i)`: equal to `height_i` on `ω̲_i`,
    /// zero outside `ω_i`. `c_j` constant.
    pub fn bumps(
        grid: &Grid,
        fam: &SubdomainFamily,
        heights: &[f64],
        c: &[f64],
        m_bound: f64,
        delta: f64,
    ) -> Result<Self, CouplingError> {
        let n = fam.n();
        if heights.len() != n || c.len() != n + 1 {
            return Err(CouplingError::Shape {
                expected: n,
                got: heights.len(),
            });
        }
        let mut a = Vec::with_capacity(n);
        for i in 1..=n {
            let profile = build_cutoff(grid, fam.driven(i), &fam.omega_under[i], 1.0)?;
            let scaled: Vec<f64> = profile.iter().map(|v| v * heights[i - 1]).collect();
            a.push(SpaceTimeField::from_spatial(grid, &scaled));
        }
        let c = c.iter().map(|&v| SpaceTimeField::constant(grid, v)).collect();
        Self::new(a, c, m_bound, delta)
    }

    /// Random member of the class with the given bounds: time-modulated bumps
    /// with random sign and height in `[delta, M]`, small smooth `c_j`.
    pub fn random_in_class<R: Rng + ?Sized>(
        grid: &Grid,
        fam: &SubdomainFamily,
        m_bound: f64,
        delta: f64,
        rng: &mut R,
    ) -> Result<Self, CouplingError> {
        let n = fam.n();
        let mut a = Vec::with_capacity(n);
        for i in 1..=n {
            let profile = build_cutoff(grid, fam.driven(i), &fam.omega_under[i], 1.0)?;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lo = delta;
            let hi = m_bound.max(delta);
            let base = rng.random_range(lo..=hi);
            let amp = rng.random_range(0.0..=1.0) * (hi - base).min(base - lo);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let horizon = grid.horizon;
            a.push(SpaceTimeField::from_fn(grid, |m, j| {
                let t = grid.t(m);
                let h = base + amp * (std::f64::consts::TAU * t / horizon + phase).sin();
                sign * h * profile[j]
            }));
        }
        let mut c = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let amp = rng.random_range(-0.5..=0.5) * m_bound;
            let freq = rng.random_range(1..=3) as f64;
            let length = grid.length;
            c.push(SpaceTimeField::from_fn(grid, |_, j| {
                amp * (freq * std::f64::consts::PI * grid.x(j) / length).sin()
            }));
        }
        Self::new(a, c, m_bound, delta)
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, i: usize) -> &SpaceTimeField {
        &self.a[i - 1]
    }

    pub fn c(&self, j: usize) -> &SpaceTimeField {
        &self.c[j]
    }

    pub fn sup_c(&self) -> f64 {
        self.c.iter().fold(0.0, |m, f| m.max(f.sup_norm()))
    }
}

/// Membership in the class with sup bound `m_bound` and lower bound `delta`.
pub fn check_class_membership(
    coeffs: &CoefficientSet,
    fam: &SubdomainFamily,
    m_bound: f64,
    delta: f64,
) -> ValidationReport {
    let mut report = ValidationReport::new();
    let abs_max = |acc: f64, v: f64| acc.max(v.abs());
    for i in 1..=coeffs.n().min(fam.n()) {
        let a = coeffs.a(i);
        let sup = a.sup_norm();
        report.push(
            Check::new("a_sup_bound", Some(i), sup <= m_bound)
                .with_margin(m_bound - sup)
                .with_detail(format!("sup |a| = {sup:.6e}")),
        );

        let omega = fam.driven(i).nodes;
        let outside = a.fold_nodes(|j| !omega.contains(j), 0.0, abs_max);
        report.push(
            Check::new("a_support", Some(i), outside == 0.0)
                .with_margin(-outside)
                .with_detail(format!("max |a| outside omega = {outside:.6e}")),
        );

        let under = fam.omega_under[i].nodes;
        let low = a.fold_nodes(|j| under.contains(j), f64::INFINITY, |acc, v| acc.min(v.abs()));
        report.push(
            Check::new("a_lower_bound", Some(i), low >= delta)
                .with_margin(low - delta)
                .with_detail(format!("min |a| on omega_under = {low:.6e}")),
        );

        let tilde = fam.omega_tilde[i].nodes;
        let lo = a.fold_nodes(|j| tilde.contains(j), f64::INFINITY, f64::min);
        let hi = a.fold_nodes(|j| tilde.contains(j), f64::NEG_INFINITY, f64::max);
        let constant_sign = lo > 0.0 || hi < 0.0;
        report.push(
            Check::new("a_constant_sign", Some(i), constant_sign)
                .with_detail(format!("range on omega_tilde [{lo:.6e}, {hi:.6e}]")),
        );
    }
    for (j, c) in coeffs.c.iter().enumerate() {
        let sup = c.sup_norm();
        report.push(
            Check::new("c_sup_bound", Some(j), sup <= m_bound)
                .with_margin(m_bound - sup)
                .with_detail(format!("sup |c| = {sup:.6e}")),
        );
    }
    report
}

/// Sign of `a_{i,k(i)}` on `ω̃_i` (sampled at the first time level).
pub fn coupling_sign(coeffs: &CoefficientSet, fam: &SubdomainFamily, i: usize) -> f64 {
    let tilde = fam.omega_tilde[i].nodes;
    if coeffs.a(i).at(0, tilde.first + tilde.len() / 2) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Constant coupling matrix: `A0[i][k(i)] = a_i`, `A0[j][j] = c_j`.
pub fn constant_coupling_matrix(tree: &CouplingTree, a: &[f64], c: &[f64]) -> DMatrix<f64> {
    let n = tree.n();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for i in 1..=n {
        m[(i, tree.parent(i))] = a[i - 1];
    }
    for (j, &v) in c.iter().enumerate().take(n + 1) {
        m[(j, j)] += v;
    }
    m
}

/// `[B, A₀B, …, A₀ⁿB]`.
pub fn kalman_matrix(a0: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let dim = b.len();
    let mut k = DMatrix::zeros(dim, dim);
    let mut col = b.clone();
    for c in 0..dim {
        k.set_column(c, &col);
        col = a0 * &col;
    }
    k
}

/// Count of singular values above `tol · σ_max`; 0 for the zero matrix.
pub fn kalman_rank(k: &DMatrix<f64>, tol: f64) -> usize {
    let sv = k.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Orthonormal basis of the left null space of the Kalman matrix. Each
/// vector is sign-normalized so its first non-negligible entry is positive.
pub fn unobservable_directions(a0: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let k = kalman_matrix(a0, b);
    let dim = k.nrows();
    let svd = k.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for c in 0..dim {
        let s = svd.singular_values[c];
        if smax == 0.0 || s <= tol * smax {
            let mut v = u.column(c).into_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            out.push(v);
        }
    }
    out
}
