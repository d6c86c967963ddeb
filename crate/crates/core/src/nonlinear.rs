//! Semilinear systems `f_i = ζ_i(x) ξ_i(y_{k(i)}, y_i)`: hypothesis checks,
//! linearization coefficients by Gauss–Legendre quadrature, and the Picard
//! realization of the fixed-point control map.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{check_class_membership, CoefficientSet, CouplingTree, SpaceTimeField};
use crate::geometry::{Grid, SubdomainFamily};
use crate::hum::{solve_penalized, ControlResult, Gramian, HumError};
use crate::pde::{LinearSystem, PdeError, TrajectoryField};
use crate::validation::{Check, ValidationReport};
use crate::weights::WeightFamily;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearError {
    #[error("|y| = {value:.3e} exceeds the working range {y_max:.3e}")]
    RangeExceeded { value: f64, y_max: f64 },
    #[error("class membership lost at iteration {iteration}: {reason}")]
    ClassMembershipLost {
        iteration: usize,
        reason: String,
        trace: Box<FixedPointTrace>,
    },
    #[error("no convergence after {iterations} iterations (last difference {last_diff:.3e})")]
    NoConvergence {
        iterations: usize,
        last_diff: f64,
        trace: Box<FixedPointTrace>,
    },
    #[error("nonlinear spec shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Hum(#[from] HumError),
}

/// Built-in scalar functions `ξ(y_parent, y_self)`. For component 0 the
/// parent argument is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Xi {
    /// `Σ c[p][q] y_parent^p y_self^q`.
    Poly { coeffs: Vec<Vec<f64>> },
    /// `amp · sin(a y_parent + b y_self)`.
    Sine { amp: f64, a: f64, b: f64 },
    /// `a y_parent + b y_self`.
    Linear { a: f64, b: f64 },
    Zero,
}

fn powi(x: f64, k: usize) -> f64 {
    x.powi(k as i32)
}

impl Xi {
    pub fn eval(&self, yp: f64, yi: f64) -> f64 {
        match self {
            Xi::Poly { coeffs } => {
                let mut s = 0.0;
                for (p, row) in coeffs.iter().enumerate() {
                    for (q, c) in row.iter().enumerate() {
                        s += c * powi(yp, p) * powi(yi, q);
                    }
                }
                s
            }
            Xi::Sine { amp, a, b } => amp * (a * yp + b * yi).sin(),
            Xi::Linear { a, b } => a * yp + b * yi,
            Xi::Zero => 0.0,
        }
    }

    /// `∂ξ/∂y_parent`.
    pub fn d_parent(&self, yp: f64, yi: f64) -> f64 {
        match self {
            Xi::Poly { coeffs } => {
                let mut s = 0.0;
                for (p, row) in coeffs.iter().enumerate().skip(1) {
                    for (q, c) in row.iter().enumerate() {
                        s += c * p as f64 * powi(yp, p - 1) * powi(yi, q);
                    }
                }
                s
            }
            Xi::Sine { amp, a, b } => amp * a * (a * yp + b * yi).cos(),
            Xi::Linear { a, .. } => *a,
            Xi::Zero => 0.0,
        }
    }

    /// `∂ξ/∂y_self`.
    pub fn d_self(&self, yp: f64, yi: f64) -> f64 {
        match self {
            Xi::Poly { coeffs } => {
                let mut s = 0.0;
                for (p, row) in coeffs.iter().enumerate() {
                    for (q, c) in row.iter().enumerate().skip(1) {
                        s += c * q as f64 * powi(yp, p) * powi(yi, q - 1);
                    }
                }
                s
            }
            Xi::Sine { amp, a, b } => amp * b * (a * yp + b * yi).cos(),
            Xi::Linear { b, .. } => *b,
            Xi::Zero => 0.0,
        }
    }
}

/// Product-form nonlinearity with stationary sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearSpec {
    pub tree: CouplingTree,
    /// `ζ_j` on the grid, `j = 0..=n`.
    pub zeta: Vec<Vec<f64>>,
    pub xi: Vec<Xi>,
    /// `ḡ_j` on the grid.
    pub gbar: Vec<Vec<f64>>,
    pub y_max: f64,
}

impl NonlinearSpec {
    pub fn new(tree: CouplingTree, zeta: Vec<Vec<f64>>, xi: Vec<Xi>, gbar: Vec<Vec<f64>>, y_max: f64) -> Result<Self, NonlinearError> {
        let n = tree.n() + 1;
        if zeta.len() != n || xi.len() != n || gbar.len() != n {
            return Err(NonlinearError::Shape(format!(
                "expected {n} entries in zeta/xi/gbar, got {}/{}/{}",
                zeta.len(),
                xi.len(),
                gbar.len()
            )));
        }
        Ok(Self {
            tree,
            zeta,
            xi,
            gbar,
            y_max,
        })
    }

    /// Spec with `ḡ_j = −f_j(x, 0, 0)`, whose stationary state is `ȳ ≡ 0`.
    pub fn with_trivial_state(tree: CouplingTree, zeta: Vec<Vec<f64>>, xi: Vec<Xi>, y_max: f64) -> Result<Self, NonlinearError> {
        let gbar = zeta
            .iter()
            .zip(&xi)
            .map(|(z, x)| z.iter().map(|zj| -zj * x.eval(0.0, 0.0)).collect())
            .collect();
        Self::new(tree, zeta, xi, gbar, y_max)
    }

    pub fn n_comp(&self) -> usize {
        self.tree.n() + 1
    }

    /// `f_i(x_j, y_parent, y_i)`.
    pub fn f(&self, i: usize, j: usize, yp: f64, yi: f64) -> f64 {
        self.zeta[i][j] * self.xi[i].eval(if i == 0 { 0.0 } else { yp }, yi)
    }

    pub fn df_dparent(&self, i: usize, j: usize, yp: f64, yi: f64) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.zeta[i][j] * self.xi[i].d_parent(yp, yi)
        }
    }

    pub fn df_dself(&self, i: usize, j: usize, yp: f64, yi: f64) -> f64 {
        self.zeta[i][j] * self.xi[i].d_self(if i == 0 { 0.0 } else { yp }, yi)
    }
}

/// 8-point Gauss–Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_01() -> [(f64, f64); 8] {
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[2 * k] = (0.5 * (1.0 - X[k]), 0.5 * W[k]);
        out[2 * k + 1] = (0.5 * (1.0 + X[k]), 0.5 * W[k]);
    }
    out
}

/// `a_{i,k(i)} = ∫₀¹ ∂f_i/∂y_parent(ȳ + τz̃) dτ`, `c_j = ∫₀¹ ∂f_j/∂y_j(ȳ + τz̃) dτ`.
pub fn linearize_coeffs(
    spec: &NonlinearSpec,
    grid: &Grid,
    ybar: &[Vec<f64>],
    ztilde: &TrajectoryField,
    m_bound: f64,
    delta: f64,
) -> Result<CoefficientSet, NonlinearError> {
    let gl = gauss_legendre_01();
    let n_comp = spec.n_comp();
    let worst = (0..=grid.nt)
        .flat_map(|m| (0..n_comp).flat_map(move |c| (0..grid.nx).map(move |j| (m, c, j))))
        .map(|(m, c, j)| (ybar[c][j] + ztilde.at(m, c, j)).abs().max(ybar[c][j].abs()))
        .fold(0.0, f64::max);
    if worst > spec.y_max {
        return Err(NonlinearError::RangeExceeded {
            value: worst,
            y_max: spec.y_max,
        });
    }
    let tree = &spec.tree;
    let a = (1..n_comp)
        .map(|i| {
            let p = tree.parent(i);
            SpaceTimeField::from_fn(grid, |m, j| {
                let (bp, zp) = (ybar[p][j], ztilde.at(m, p, j));
                let (bi, zi) = (ybar[i][j], ztilde.at(m, i, j));
                gl.iter()
                    .map(|&(t, w)| w * spec.df_dparent(i, j, bp + t * zp, bi + t * zi))
                    .sum()
            })
        })
        .collect();
    let c = (0..n_comp)
        .map(|i| {
            let p = if i == 0 { 0 } else { tree.parent(i) };
            SpaceTimeField::from_fn(grid, |m, j| {
                let (bp, zp) = if i == 0 { (0.0, 0.0) } else { (ybar[p][j], ztilde.at(m, p, j)) };
                let (bi, zi) = (ybar[i][j], ztilde.at(m, i, j));
                gl.iter()
                    .map(|&(t, w)| w * spec.df_dself(i, j, bp + t * zp, bi + t * zi))
                    .sum()
            })
        })
        .collect();
    Ok(CoefficientSet::new(a, c, m_bound, delta).expect("shapes match the tree"))
}

/// `(M₀, δ₀)` of the coefficients linearized at `ȳ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearizedClass {
    pub m0: f64,
    pub delta0: f64,
}

/// Support and coupling hypotheses, plus the class of the linearization.
pub fn check_nonlinear_hypotheses(
    spec: &NonlinearSpec,
    grid: &Grid,
    fam: &SubdomainFamily,
    ybar: &[Vec<f64>],
) -> (ValidationReport, LinearizedClass) {
    let mut r = ValidationReport::new();
    let n = spec.tree.n();
    let mut delta0 = f64::INFINITY;
    let mut m0: f64 = 0.0;
    for i in 1..=n.min(fam.n()) {
        let omega = fam.driven(i).nodes;
        let outside = (0..grid.nx)
            .filter(|j| !omega.contains(*j))
            .fold(0.0f64, |a, j| a.max(spec.zeta[i][j].abs()));
        r.push(
            Check::new("f_support_in_omega", Some(i), outside == 0.0)
                .with_margin(-outside)
                .with_detail(format!("max |zeta| outside omega = {outside:.3e}")),
        );
        let p = spec.tree.parent(i);
        let a0: Vec<f64> = (0..grid.nx)
            .map(|j| spec.df_dparent(i, j, ybar[p][j], ybar[i][j]))
            .collect();
        let under = fam.omega_under[i].nodes;
        let low = under.iter().fold(f64::INFINITY, |a, j| a.min(a0[j].abs()));
        r.push(
            Check::new("coupling_derivative_on_under", Some(i), low > 0.0)
                .with_margin(low)
                .with_detail(format!("min |d f/d y_parent| on omega_under = {low:.3e}")),
        );
        let tilde = fam.omega_tilde[i].nodes;
        let (lo, hi) = tilde
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), j| (a.min(a0[j]), b.max(a0[j])));
        r.push(Check::new("coupling_derivative_sign", Some(i), lo > 0.0 || hi < 0.0));
        delta0 = delta0.min(low);
        m0 = a0.iter().fold(m0, |a, v| a.max(v.abs()));
    }
    for i in 0..=n {
        let p = if i == 0 { 0 } else { spec.tree.parent(i) };
        for j in 0..grid.nx {
            let yp = if i == 0 { 0.0 } else { ybar[p][j] };
            m0 = m0.max(spec.df_dself(i, j, yp, ybar[i][j]).abs());
        }
    }
    if !delta0.is_finite() {
        delta0 = 0.0;
    }
    (r, LinearizedClass { m0, delta0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointIterate {
    pub iter: usize,
    pub diff_norm: f64,
    pub terminal_norm: f64,
    pub u_linf: f64,
    pub z_sup: f64,
    pub class_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointTrace {
    pub iterates: Vec<FixedPointIterate>,
    pub converged: bool,
    pub beta0: f64,
}

impl FixedPointTrace {
    /// CSV `iter,diff_norm,terminal_norm,u_linf,class_ok`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "diff_norm", "terminal_norm", "u_linf", "class_ok"])?;
        for it in &self.iterates {
            w.write_record([
                it.iter.to_string(),
                format!("{:.16e}", it.diff_norm),
                format!("{:.16e}", it.terminal_norm),
                format!("{:.16e}", it.u_linf),
                it.class_ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointParams {
    pub beta0: f64,
    pub eps: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            beta0: 0.1,
            eps: 1e-8,
            tol: 1e-10,
            max_iters: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome {
    pub control: ControlResult,
    pub trace: FixedPointTrace,
    /// `y = ȳ + z`.
    pub trajectory: TrajectoryField,
    /// `‖y(T) − ȳ‖_{L²}`.
    pub terminal_deviation: f64,
    pub class: LinearizedClass,
}

/// Picard iteration `z̃ ← forward(y0 − ȳ, u[z̃])`, where `u[z̃]` is the
/// penalized control of the system linearized along `z̃`.
pub fn fixed_point_control(
    spec: &NonlinearSpec,
    grid: &Grid,
    fam: &SubdomainFamily,
    weights: &WeightFamily,
    ybar: &[Vec<f64>],
    y0: &[f64],
    params: &FixedPointParams,
) -> Result<FixedPointOutcome, NonlinearError> {
    let n_comp = spec.n_comp();
    if y0.len() != n_comp * grid.nx {
        return Err(NonlinearError::Shape(format!(
            "y0 has length {}, expected {}",
            y0.len(),
            n_comp * grid.nx
        )));
    }
    let (_, class) = check_nonlinear_hypotheses(spec, grid, fam, ybar);
    let (m_class, d_class) = (2.0 * class.m0, 0.5 * class.delta0);
    let z0: Vec<f64> = (0..n_comp * grid.nx)
        .map(|k| y0[k] - ybar[k / grid.nx][k % grid.nx])
        .collect();
    let mut trace = FixedPointTrace {
        iterates: Vec::new(),
        converged: false,
        beta0: params.beta0,
    };
    let mut ztilde = TrajectoryField::zeros(grid, n_comp);
    let omega0 = fam.omega0.nodes;
    for k in 0..params.max_iters {
        let coeffs = linearize_coeffs(spec, grid, ybar, &ztilde, m_class, d_class)?;
        let report = check_class_membership(&coeffs, fam, m_class, d_class);
        if !report.passed() {
            let reason = report
                .failures()
                .map(|c| format!("{}[{}]: {}", c.relation, c.index.unwrap_or(0), c.detail))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(NonlinearError::ClassMembershipLost {
                iteration: k,
                reason,
                trace: Box::new(trace),
            });
        }
        let sys = LinearSystem::new(grid, &spec.tree, &coeffs, omega0)?;
        let gram = Gramian::new(sys, weights);
        let control = solve_penalized(&gram, &z0, params.eps)?;
        let next = sys.solve_forward(&z0, Some(&control.u), None)?;
        let diff = next.max_abs_diff(&ztilde);
        let z_sup = next.sup_norm();
        let in_ball = z_sup <= params.beta0;
        trace.iterates.push(FixedPointIterate {
            iter: k + 1,
            diff_norm: diff,
            terminal_norm: grid.norm(next.terminal()),
            u_linf: control.linf,
            z_sup,
            class_ok: in_ball,
        });
        if !in_ball {
            return Err(NonlinearError::ClassMembershipLost {
                iteration: k + 1,
                reason: format!("|z|_inf = {z_sup:.3e} left the ball of radius {:.3e}", params.beta0),
                trace: Box::new(trace),
            });
        }
        ztilde = next;
        if diff < params.tol {
            trace.converged = true;
            let trajectory = TrajectoryField::from_fn(grid, n_comp, |m, c, j| ybar[c][j] + ztilde.at(m, c, j));
            let terminal_deviation = grid.norm(ztilde.terminal());
            return Ok(FixedPointOutcome {
                control,
                trace,
                trajectory,
                terminal_deviation,
                class,
            });
        }
    }
    let last_diff = trace.iterates.last().map_or(f64::NAN, |i| i.diff_norm);
    Err(NonlinearError::NoConvergence {
        iterations: params.max_iters,
        last_diff,
        trace: Box::new(trace),
    })
}
