//! Auxiliary functions η, the shifted functions ψ = η + K, the singular
//! weights φ and α, their ordering certificates, and the bootstrap exponent
//! sequence σ_j.
//!
//! Every exponential `e^{sα}` is handled through its logarithm `sα`; the
//! helper [`exp_weight`] flushes anything below `-700` to exactly zero.

use serde::Serialize;
use thiserror::Error;

use crate::coupling::CouplingTree;
use crate::geometry::{Grid, Subdomain, SubdomainFamily};
use crate::validation::{Check, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("omega_tilde ({lo}, {hi}) touches the boundary of (0, {length})")]
    SubdomainTouchesBoundary { lo: f64, hi: f64, length: f64 },
    #[error("separation eps must be positive and below inf psi (got {0})")]
    BadSeparation(f64),
    #[error("weight parameter {name} must be positive (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("phi is infinite at t = {0}")]
    EvalAtSingularTime(f64),
    #[error("tree has n = {tree}, subdomain family has n = {family}")]
    Shape { tree: usize, family: usize },
}

/// Logarithms below this are flushed to a zero weight.
pub const LOG_FLOOR: f64 = -700.0;

/// `e^{x}` for a log-weight `x ≤ 0`, exactly zero below [`LOG_FLOOR`].
#[inline]
pub fn exp_weight(log_w: f64) -> f64 {
    if log_w < LOG_FLOOR {
        0.0
    } else {
        log_w.exp()
    }
}

/// `t (T - t)`.
#[inline]
pub fn theta(t: f64, horizon: f64) -> f64 {
    t * (horizon - t)
}

/// `1 - (1-u)^3 (1 + u + u^2)`: rises from 0 to 1 on `[0, 1]` with
/// `P'(1) = P''(1) = 0`.
#[inline]
fn rise(u: f64) -> f64 {
    let v = 1.0 - u;
    1.0 - v * v * v * (1.0 + u + u * u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxiliaryFunction {
    pub values: Vec<f64>,
    pub center: f64,
    pub critical_subdomain: Subdomain,
    /// Smallest |central difference| over nodes outside `ω̃`.
    pub g_min: f64,
}

impl AuxiliaryFunction {
    /// Continuous supremum; the discrete maximum never exceeds it.
    pub fn sup(&self) -> f64 {
        1.0
    }

    /// Nodes where the central difference vanishes (to `1e-14`).
    pub fn gradient_zero_nodes(&self, grid: &Grid) -> Vec<usize> {
        central_differences(grid, &self.values)
            .iter()
            .enumerate()
            .filter(|(_, d)| d.abs() <= 1e-14)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Central differences with zero Dirichlet extension.
pub fn central_differences(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|j| {
            let left = if j == 0 { 0.0 } else { v[j - 1] };
            let right = if j + 1 == n { 0.0 } else { v[j + 1] };
            (right - left) / (2.0 * grid.h)
        })
        .collect()
}

/// Piecewise-quintic η with a single maximum (value 1) at the center of `ω̃`,
/// zero at both ends of the domain.
pub fn build_eta(grid: &Grid, omega_tilde: &Subdomain) -> Result<AuxiliaryFunction, WeightError> {
    let tol = 1e-9 * grid.h;
    if omega_tilde.lo <= tol || omega_tilde.hi >= grid.length - tol {
        return Err(WeightError::SubdomainTouchesBoundary {
            lo: omega_tilde.lo,
            hi: omega_tilde.hi,
            length: grid.length,
        });
    }
    let c = omega_tilde.center();
    let values: Vec<f64> = (0..grid.nx)
        .map(|j| {
            let x = grid.x(j);
            if x <= c {
                rise(x / c)
            } else {
                rise((grid.length - x) / (grid.length - c))
            }
        })
        .collect();
    let diffs = central_differences(grid, &values);
    let g_min = diffs
        .iter()
        .enumerate()
        .filter(|(j, _)| !omega_tilde.nodes.contains(*j))
        .fold(f64::INFINITY, |m, (_, d)| m.min(d.abs()));
    Ok(AuxiliaryFunction {
        values,
        center: c,
        critical_subdomain: *omega_tilde,
        g_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PsiKind {
    /// Star weight ψ_j.
    Plain,
    /// Tree weight ψ_{j,f} (node with children).
    Father,
    /// Tree weight ψ_{i,s}.
    Son,
}

/// `ψ = η_j + K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiWeight {
    pub label: String,
    pub component: usize,
    pub kind: PsiKind,
    pub k: f64,
    #[serde(skip)]
    pub eta: Vec<f64>,
}

impl PsiWeight {
    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        self.eta[j] + self.k
    }

    /// `sup ψ` over the closed domain (η normalized to sup 1).
    pub fn sup(&self) -> f64 {
        self.k + 1.0
    }

    /// `inf ψ`, attained on the boundary where η = 0.
    pub fn inf(&self) -> f64 {
        self.k
    }
}

/// Ordered pair of weights (`low`, `high`) with `ψ_high > ψ_low` required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderPair {
    pub low: usize,
    pub high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightFamily {
    pub psis: Vec<PsiWeight>,
    /// Index into `psis` of the weight attached to each component.
    pub component_weight: Vec<usize>,
    pub order_pairs: Vec<OrderPair>,
    pub eps_sep: f64,
    pub lambda: f64,
    pub s: f64,
    pub psi_bar: f64,
    pub psi_under: f64,
    /// Global shift added to every K to reach ψ̄/ψ̲ ≤ 3/2.
    pub shift: f64,
    pub horizon: f64,
    pub certificate: ValidationReport,
}

/// Weight parameters; `None` selects the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightParams {
    pub lambda: Option<f64>,
    pub s: Option<f64>,
    pub eps_sep: f64,
    /// Target for `2 s |ᾱ(T/2)|` when `s` is automatic.
    pub kappa: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            lambda: None,
            s: None,
            eps_sep: 0.05,
            kappa: 4.0,
        }
    }
}

/// Star constants: `K_0 = 7.5 sup η_0`, `K_i ≥ K_0 + sup η_0 + 0.1`.
pub fn assign_constants_star(etas: &[AuxiliaryFunction]) -> Vec<f64> {
    let k0 = 7.5 * etas[0].sup();
    let mut k = vec![k0];
    for eta in &etas[1..] {
        k.push((7.5 * eta.sup()).max(k0 + etas[0].sup() + 0.1));
    }
    k
}

/// Tree constants, parents first. Returns `(K_f, K_s)` where `K_f[j]` is set
/// for every `j` with children and `K_s[i]` for every `i ≥ 1`.
pub fn assign_constants_tree(
    etas: &[AuxiliaryFunction],
    tree: &CouplingTree,
    eps_sep: f64,
) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>), WeightError> {
    if !(eps_sep > 0.0) {
        return Err(WeightError::BadSeparation(eps_sep));
    }
    let n = tree.n();
    let mut kf: Vec<Option<f64>> = vec![None; n + 1];
    let mut ks: Vec<Option<f64>> = vec![None; n + 1];
    for j in tree.root_first_order() {
        let kids = tree.children(j);
        if kids.is_empty() {
            continue;
        }
        let base = 7.5 * etas[j].sup();
        let f = if j == 0 {
            base
        } else {
            let siblings = tree.children(tree.parent(j));
            let top = siblings
                .iter()
                .map(|&l| ks[l].expect("siblings assigned with their parent") + etas[l].sup())
                .fold(f64::NEG_INFINITY, f64::max);
            base.max(top + 2.1 * eps_sep)
        };
        kf[j] = Some(f);
        for &i in &kids {
            ks[i] = Some((7.5 * etas[i].sup()).max(f + etas[j].sup() + 2.1 * eps_sep));
        }
    }
    Ok((kf, ks))
}

impl WeightFamily {
    /// Builds η for each component, assigns constants (star or tree),
    /// applies the ratio shift, and fixes λ and s.
    pub fn build(
        grid: &Grid,
        fam: &SubdomainFamily,
        tree: &CouplingTree,
        params: &WeightParams,
    ) -> Result<Self, WeightError> {
        if fam.n() != tree.n() {
            return Err(WeightError::Shape {
                tree: tree.n(),
                family: fam.n(),
            });
        }
        if !(params.eps_sep > 0.0) {
            return Err(WeightError::BadSeparation(params.eps_sep));
        }
        let n = tree.n();
        let etas = fam
            .omega_tilde
            .iter()
            .map(|t| build_eta(grid, t))
            .collect::<Result<Vec<_>, _>>()?;

        let mut psis = Vec::new();
        let mut component_weight = vec![0; n + 1];
        let mut order_pairs = Vec::new();
        if tree.is_star() {
            let k = assign_constants_star(&etas);
            for (j, (eta, kj)) in etas.iter().zip(&k).enumerate() {
                component_weight[j] = psis.len();
                psis.push(PsiWeight {
                    label: format!("psi_{j}"),
                    component: j,
                    kind: PsiKind::Plain,
                    k: *kj,
                    eta: eta.values.clone(),
                });
            }
            for i in 1..=n {
                order_pairs.push(OrderPair { low: 0, high: i });
            }
        } else {
            let (kf, ks) = assign_constants_tree(&etas, tree, params.eps_sep)?;
            let mut f_index = vec![None; n + 1];
            let mut s_index = vec![None; n + 1];
            for j in tree.root_first_order() {
                if let Some(k) = kf[j] {
                    f_index[j] = Some(psis.len());
                    psis.push(PsiWeight {
                        label: format!("psi_{j}_f"),
                        component: j,
                        kind: PsiKind::Father,
                        k,
                        eta: etas[j].values.clone(),
                    });
                }
                if let Some(k) = ks[j] {
                    s_index[j] = Some(psis.len());
                    psis.push(PsiWeight {
                        label: format!("psi_{j}_s"),
                        component: j,
                        kind: PsiKind::Son,
                        k,
                        eta: etas[j].values.clone(),
                    });
                }
            }
            component_weight[0] = f_index[0].expect("root has children");
            for i in 1..=n {
                component_weight[i] = s_index[i].expect("every driven node has a son weight");
                let fj = f_index[tree.parent(i)].expect("parent has children");
                order_pairs.push(OrderPair {
                    low: fj,
                    high: component_weight[i],
                });
                if let Some(fi) = f_index[i] {
                    for l in tree.children(tree.parent(i)) {
                        order_pairs.push(OrderPair {
                            low: s_index[l].expect("son weight"),
                            high: fi,
                        });
                    }
                }
            }
        }

        let eps = params.eps_sep;
        let raw_bar = psis.iter().map(PsiWeight::sup).fold(f64::NEG_INFINITY, f64::max) + eps;
        let raw_under = psis.iter().map(PsiWeight::inf).fold(f64::INFINITY, f64::min) - eps;
        if !(raw_under > 0.0) {
            return Err(WeightError::BadSeparation(eps));
        }
        let shift = ratio_shift(raw_bar, raw_under);
        for p in &mut psis {
            p.k += shift;
        }
        let psi_bar = raw_bar + shift;
        let psi_under = raw_under + shift;

        let lambda = params.lambda.unwrap_or(2.0 / psi_bar);
        if !(lambda > 0.0) {
            return Err(WeightError::NonPositiveParameter {
                name: "lambda",
                value: lambda,
            });
        }
        let mut family = Self {
            psis,
            component_weight,
            order_pairs,
            eps_sep: eps,
            lambda,
            s: 0.0,
            psi_bar,
            psi_under,
            shift,
            horizon: grid.horizon,
            certificate: ValidationReport::new(),
        };
        let s = params.s.unwrap_or_else(|| family.working_s(params.kappa));
        if !(s > 0.0) {
            return Err(WeightError::NonPositiveParameter { name: "s", value: s });
        }
        family.s = s;
        family.certificate = family.invariants(grid, fam, &etas);
        Ok(family)
    }

    /// `e^{1.5 λ ψ̄}`.
    #[inline]
    fn top(&self) -> f64 {
        (1.5 * self.lambda * self.psi_bar).exp()
    }

    /// The `s` with `2 s |ᾱ(T/2)| = kappa`, so the control weight `e^{2sᾱ}`
    /// stays representable across the horizon.
    pub fn working_s(&self, kappa: f64) -> f64 {
        let a = self.top() - (self.lambda * self.psi_bar).exp();
        kappa * self.horizon * self.horizon / (8.0 * a)
    }

    pub fn with_s(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.s = s;
        out
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.lambda = lambda;
        out
    }

    pub fn n_components(&self) -> usize {
        self.component_weight.len()
    }

    /// `ψ` attached to component `j`.
    pub fn psi(&self, j: usize) -> &PsiWeight {
        &self.psis[self.component_weight[j]]
    }

    /// `φ` of weight `w` at node `x` and time `t`.
    #[inline]
    pub fn phi_of(&self, w: usize, t: f64, x: usize) -> f64 {
        (self.lambda * self.psis[w].at(x)).exp() / theta(t, self.horizon)
    }

    /// `α` of weight `w`.
    #[inline]
    pub fn alpha_of(&self, w: usize, t: f64, x: usize) -> f64 {
        ((self.lambda * self.psis[w].at(x)).exp() - self.top()) / theta(t, self.horizon)
    }

    #[inline]
    pub fn alpha_bar(&self, t: f64) -> f64 {
        ((self.lambda * self.psi_bar).exp() - self.top()) / theta(t, self.horizon)
    }

    #[inline]
    pub fn alpha_under(&self, t: f64) -> f64 {
        ((self.lambda * self.psi_under).exp() - self.top()) / theta(t, self.horizon)
    }

    #[inline]
    pub fn phi_bar(&self, t: f64) -> f64 {
        (self.lambda * self.psi_bar).exp() / theta(t, self.horizon)
    }

    #[inline]
    pub fn phi_under(&self, t: f64) -> f64 {
        (self.lambda * self.psi_under).exp() / theta(t, self.horizon)
    }

    /// `log e^{c s ᾱ(t)}`, `-∞` at the endpoints.
    #[inline]
    pub fn log_bar(&self, c: f64, t: f64) -> f64 {
        if theta(t, self.horizon) <= 0.0 {
            f64::NEG_INFINITY
        } else {
            c * self.s * self.alpha_bar(t)
        }
    }

    /// `log e^{c s α̲(t)}`, `-∞` at the endpoints.
    #[inline]
    pub fn log_under(&self, c: f64, t: f64) -> f64 {
        if theta(t, self.horizon) <= 0.0 {
            f64::NEG_INFINITY
        } else {
            c * self.s * self.alpha_under(t)
        }
    }

    /// `e^{2sᾱ(t)}`, zero at the endpoints.
    pub fn control_weight(&self, t: f64) -> f64 {
        exp_weight(self.log_bar(2.0, t))
    }

    /// Point evaluation for every component at interior time `t`.
    pub fn eval(&self, t: f64, x: usize) -> Result<WeightEval, WeightError> {
        if !(t > 0.0 && t < self.horizon) {
            return Err(WeightError::EvalAtSingularTime(t));
        }
        let mut phi = Vec::with_capacity(self.n_components());
        let mut alpha = Vec::with_capacity(self.n_components());
        let mut log_weight = Vec::with_capacity(self.n_components());
        for &w in &self.component_weight {
            let a = self.alpha_of(w, t, x);
            phi.push(self.phi_of(w, t, x));
            alpha.push(a);
            log_weight.push(self.s * a);
        }
        Ok(WeightEval {
            phi,
            alpha,
            log_weight,
            phi_bar: self.phi_bar(t),
            phi_under: self.phi_under(t),
            alpha_bar: self.alpha_bar(t),
            alpha_under: self.alpha_under(t),
        })
    }

    fn invariants(&self, grid: &Grid, fam: &SubdomainFamily, etas: &[AuxiliaryFunction]) -> ValidationReport {
        let mut r = ValidationReport::new();
        for (j, eta) in etas.iter().enumerate() {
            let low = eta.values.iter().copied().fold(f64::INFINITY, f64::min);
            r.push(Check::new("eta_positive", Some(j), low > 0.0).with_margin(low));
            let zeros = eta.gradient_zero_nodes(grid);
            let inside = zeros.iter().all(|&z| fam.omega_tilde[j].nodes.contains(z));
            r.push(
                Check::new("eta_critical_in_tilde", Some(j), inside && eta.g_min > 0.0)
                    .with_margin(eta.g_min)
                    .with_detail(format!("g_min = {:.6e}", eta.g_min)),
            );
        }
        for (w, p) in self.psis.iter().enumerate() {
            let ratio = p.sup() / p.inf();
            r.push(
                Check::new(format!("ratio_8_7:{}", p.label), Some(w), ratio < 8.0 / 7.0)
                    .with_margin(8.0 / 7.0 - ratio),
            );
        }
        for pair in &self.order_pairs {
            let lo = &self.psis[pair.low];
            let hi = &self.psis[pair.high];
            let gap = match (lo.kind, hi.kind) {
                (PsiKind::Plain, PsiKind::Plain) => 0.0,
                _ => 2.0 * self.eps_sep,
            };
            let margin = hi.inf() - (lo.sup() + gap);
            r.push(
                Check::new(format!("order:{}<{}", lo.label, hi.label), Some(pair.high), margin > 0.0)
                    .with_margin(margin),
            );
        }
        let bar_ratio = self.psi_bar / self.psi_under;
        r.push(Check::new("psi_bar_ratio", None, bar_ratio < 1.5).with_margin(1.5 - bar_ratio));
        let eps_room = self.psi_under;
        r.push(Check::new("eps_below_inf_psi", None, eps_room > 0.0).with_margin(eps_room));
        r
    }

    pub fn certificate_passed(&self) -> bool {
        self.certificate.passed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightEval {
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `s α_j`, the logarithm of `e^{s α_j}`.
    pub log_weight: Vec<f64>,
    pub phi_bar: f64,
    pub phi_under: f64,
    pub alpha_bar: f64,
    pub alpha_under: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderWitness {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub weight: String,
    pub m: i32,
    /// Log-space margin; negative means violated.
    pub margin: f64,
}

/// Smallest `s` on the grid beyond which a relation holds at every sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderThreshold {
    pub relation: String,
    pub lambda: f64,
    pub s_threshold: Option<f64>,
    /// Worst sample at the largest failing `s`.
    pub witness: Option<OrderWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioCheck {
    pub lambda: f64,
    pub max_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightOrderReport {
    pub m0: u32,
    pub thresholds: Vec<OrderThreshold>,
    pub ratio: Vec<RatioCheck>,
    /// Smallest λ on the grid beyond which `α̲/ᾱ < 2`.
    pub lambda_threshold: Option<f64>,
}

impl WeightOrderReport {
    pub fn threshold(&self, relation: &str, lambda: f64) -> Option<&OrderThreshold> {
        self.thresholds
            .iter()
            .find(|t| t.relation == relation && t.lambda == lambda)
    }

    pub fn all_finite(&self) -> bool {
        self.thresholds.iter().all(|t| t.s_threshold.is_some()) && self.lambda_threshold.is_some()
    }
}

/// Added on top of the exact shift so the ratio lands strictly below 3/2.
pub const RATIO_SLACK: f64 = 0.1;

/// Smallest shift `d` (plus [`RATIO_SLACK`]) with `(bar + d)/(under + d) < 3/2`;
/// zero when the ratio already holds.
pub fn ratio_shift(raw_bar: f64, raw_under: f64) -> f64 {
    let need = 2.0 * (raw_bar - 1.5 * raw_under);
    if need >= 0.0 {
        need + RATIO_SLACK
    } else {
        0.0
    }
}

pub const REL_LOWER: &str = "under_le_weighted";
pub const REL_UPPER: &str = "weighted_le_bar";
pub const REL_PAIR: &str = "low_le_weighted_high";

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Worst log-margin of one relation over all samples at `(λ, s)`, with its
/// location. Each relation is affine in `m`, so `m = ±m0` covers `|m| ≤ m0`.
fn worst_margin(
    fam: &WeightFamily,
    grid: &Grid,
    relation: &str,
    s: f64,
    m0: i32,
) -> (f64, OrderWitness) {
    let top = fam.top();
    let lam = fam.lambda;
    let e_bar = (lam * fam.psi_bar).exp();
    let e_under = (lam * fam.psi_under).exp();
    let mut worst = (f64::INFINITY, None);
    let mut consider = |margin: f64, t: f64, x: usize, w: usize, m: i32| {
        if margin < worst.0 {
            worst = (
                margin,
                Some(OrderWitness {
                    s,
                    t,
                    x: grid.x(x),
                    weight: fam.psis[w].label.clone(),
                    m,
                    margin,
                }),
            );
        }
    };
    for step in 1..grid.nt {
        let t = grid.t(step);
        let th = theta(t, grid.horizon);
        for x in 0..grid.nx {
            match relation {
                REL_LOWER | REL_UPPER => {
                    for w in 0..fam.psis.len() {
                        let e = (lam * fam.psis[w].at(x)).exp();
                        let log_sphi = (s * e / th).ln();
                        let s_alpha = s * (e - top) / th;
                        for m in [-m0, m0] {
                            let mid = m as f64 * log_sphi + s_alpha;
                            let margin = if relation == REL_LOWER {
                                mid - s * (e_under - top) / th
                            } else {
                                s * (e_bar - top) / th - mid
                            };
                            consider(margin, t, x, w, m);
                        }
                    }
                }
                _ => {
                    for pair in &fam.order_pairs {
                        let e_lo = (lam * fam.psis[pair.low].at(x)).exp();
                        let e_hi = (lam * fam.psis[pair.high].at(x)).exp();
                        let log_sphi = (s * e_hi / th).ln();
                        for m in [-m0, m0] {
                            let margin =
                                m as f64 * log_sphi + s * (e_hi - top) / th - s * (e_lo - top) / th;
                            consider(margin, t, x, pair.high, m);
                        }
                    }
                }
            }
        }
    }
    (worst.0, worst.1.expect("at least one sample"))
}

/// Scans `(λ, s)` grids for the orderings `e^{sα̲} ≤ s^m φ^m e^{sα} ≤ e^{sᾱ}`,
/// `e^{sα_low} ≤ s^m φ_high^m e^{sα_high}` and `α̲/ᾱ < 2`, over all nodes and
/// interior time levels.
pub fn check_weight_order(
    fam: &WeightFamily,
    grid: &Grid,
    m0: u32,
    lambda_grid: &[f64],
    s_grid: &[f64],
) -> WeightOrderReport {
    let m0i = m0 as i32;
    let mut thresholds = Vec::new();
    let mut ratio = Vec::new();
    for &lambda in lambda_grid {
        let f = fam.with_lambda(lambda);
        for relation in [REL_LOWER, REL_UPPER, REL_PAIR] {
            if relation == REL_PAIR && f.order_pairs.is_empty() {
                continue;
            }
            let mut threshold = None;
            let mut witness = None;
            for &s in s_grid.iter().rev() {
                let (margin, w) = worst_margin(&f, grid, relation, s, m0i);
                if margin >= 0.0 {
                    threshold = Some(s);
                } else {
                    witness = Some(w);
                    break;
                }
            }
            thresholds.push(OrderThreshold {
                relation: relation.to_string(),
                lambda,
                s_threshold: threshold,
                witness,
            });
        }
        let top = f.top();
        let max_ratio = (top - (lambda * f.psi_under).exp()) / (top - (lambda * f.psi_bar).exp());
        ratio.push(RatioCheck {
            lambda,
            max_ratio,
            passed: max_ratio < 2.0,
        });
    }
    let mut lambda_threshold = None;
    for r in ratio.iter().rev() {
        if r.passed {
            lambda_threshold = Some(r.lambda);
        } else {
            break;
        }
    }
    WeightOrderReport {
        m0,
        thresholds,
        ratio,
        lambda_threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSequence {
    pub sigma: Vec<f64>,
    pub m0: usize,
    /// Set when `σ_0 = 2` already exceeds `(N+2)/2`.
    pub edge_case: bool,
}

/// `σ_0 = 2`, `σ_j = (N+2)σ/(N+2-2σ)` while `σ < (N+2)/2`, else `1.5σ`,
/// stopped at the first `m0` with `σ_{m0} > (N+2)/2 ≥ σ_{m0-1}`.
pub fn sigma_sequence(dim: usize) -> SigmaSequence {
    let bound = (dim as f64 + 2.0) / 2.0;
    let mut sigma = vec![2.0];
    if sigma[0] > bound {
        return SigmaSequence {
            sigma,
            m0: 0,
            edge_case: true,
        };
    }
    loop {
        let prev = *sigma.last().unwrap();
        let next = if prev < bound {
            (dim as f64 + 2.0) * prev / (dim as f64 + 2.0 - 2.0 * prev)
        } else {
            1.5 * prev
        };
        sigma.push(next);
        if next > bound {
            break;
        }
    }
    SigmaSequence {
        m0: sigma.len() - 1,
        sigma,
        edge_case: false,
    }
}

/// Default `δ₁` for the L∞ estimate.
pub fn default_delta1(s: f64) -> f64 {
    0.05 * s
}
