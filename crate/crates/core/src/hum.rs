//! Penalized HUM: conjugate gradients on `(Λ + εI) q = −z_free(T)`, control
//! reconstruction `u = e^{2sᾱ} p_0 χ_{ω0}`, and ε-sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Grid;
use crate::pde::{ControlField, LinearSystem, PdeError, TrajectoryField};
use crate::weights::{exp_weight, WeightFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumError {
    #[error("penalty must be positive (got {0})")]
    NonPositivePenalty(f64),
    #[error("conjugate gradients reached {iterations} iterations with relative residual {residual:.3e}")]
    CgStalled { iterations: usize, residual: f64 },
    #[error("optimality defect |q + z(T)/eps| / |q| = {defect:.3e} exceeds {tol:.0e}")]
    InconsistentOptimality { defect: f64, tol: f64 },
    #[error("eps list must be positive and decreasing")]
    BadEpsList,
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// CG stopping target relative to `‖z_free(T)‖`.
pub const CG_REL_TOL: f64 = 1e-8;
/// Required relative agreement of `q` and `−z(T)/ε`.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// The Gramian `Λ: q ↦ z(T)` for `u = e^{2sᾱ} p_0[q] χ_{ω0}`, `z(0) = 0`.
#[derive(Debug, Clone)]
pub struct Gramian<'a> {
    pub sys: LinearSystem<'a>,
    pub weights: &'a WeightFamily,
    /// `e^{2sᾱ(t_m)}` per level; zero at both ends.
    level_weight: Vec<f64>,
}

impl<'a> Gramian<'a> {
    pub fn new(sys: LinearSystem<'a>, weights: &'a WeightFamily) -> Self {
        let level_weight = (0..=sys.grid.nt)
            .map(|m| weights.control_weight(sys.grid.t(m)))
            .collect();
        Self {
            sys,
            weights,
            level_weight,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.sys.grid
    }

    pub fn level_weight(&self, m: usize) -> f64 {
        self.level_weight[m]
    }

    /// `u^m = e^{2sᾱ(t_m)} p_0^m` on `ω0`.
    pub fn control_from_adjoint(&self, p: &TrajectoryField) -> ControlField {
        let nodes = self.sys.omega0;
        ControlField::from_fn(self.sys.grid, nodes, |m, j| self.level_weight[m] * p.at(m, 0, j))
    }

    /// `Λ q` together with the adjoint and control it produced.
    pub fn apply_full(&self, q: &[f64]) -> Result<(Vec<f64>, TrajectoryField, ControlField), PdeError> {
        let p = self.sys.solve_adjoint(q, None)?;
        let u = self.control_from_adjoint(&p);
        let zeros = vec![0.0; q.len()];
        let z_t = self.sys.solve_forward_terminal(&zeros, Some(&u), None)?;
        Ok((z_t, p, u))
    }

    pub fn apply(&self, q: &[f64]) -> Result<Vec<f64>, PdeError> {
        Ok(self.apply_full(q)?.0)
    }

    /// `Σ_{m<Nt} τ h Σ_{ω0} e^{2sᾱ} |p_0|²`, which equals `⟨Λq, q⟩`.
    pub fn weighted_energy(&self, p: &TrajectoryField) -> f64 {
        let g = self.sys.grid;
        let nodes = self.sys.omega0;
        let mut total = 0.0;
        for m in 0..g.nt {
            let w = self.level_weight[m];
            if w == 0.0 {
                continue;
            }
            let s: f64 = p.comp(m, 0)[nodes.first..=nodes.last].iter().map(|v| v * v).sum();
            total += w * s;
        }
        g.tau * g.h * total
    }
}

/// `(‖e^{sᾱ} p_0‖_{L²(Q_{ω0})}, ‖u‖_∞)` for a control in optimality form.
/// The weighted norm equals `‖u e^{−sᾱ}‖` without dividing by the weight.
pub fn control_norms(grid: &Grid, weights: &WeightFamily, u: &ControlField, p0: &ControlField) -> (f64, f64) {
    let mut total = 0.0;
    for m in 0..grid.nt {
        let w = exp_weight(weights.log_bar(2.0, grid.t(m)));
        if w == 0.0 {
            continue;
        }
        total += w * p0.level(m).iter().map(|v| v * v).sum::<f64>();
    }
    ((grid.tau * grid.h * total).sqrt(), u.linf())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlResult {
    #[serde(skip)]
    pub u: ControlField,
    /// Terminal adjoint datum `q = p^ε(T)`.
    #[serde(skip)]
    pub q: Vec<f64>,
    #[serde(skip)]
    pub z_terminal: Vec<f64>,
    pub terminal_norm: f64,
    pub weighted_l2: f64,
    pub linf: f64,
    pub cg_iters: usize,
    pub eps: f64,
    /// Final `‖(Λ+ε)q + b‖ / ‖b‖`.
    pub gramian_residual: f64,
    /// `‖q + z(T)/ε‖ / ‖q‖`.
    pub consistency: f64,
    /// Dual energy `½⟨(Λ+ε)q, q⟩ + ⟨b, q⟩` after each CG iteration.
    pub energy_trace: Vec<f64>,
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves the penalized problem from `z0` at penalty `eps`.
pub fn solve_penalized(gram: &Gramian, z0: &[f64], eps: f64) -> Result<ControlResult, HumError> {
    if !(eps > 0.0) {
        return Err(HumError::NonPositivePenalty(eps));
    }
    let sys = &gram.sys;
    let grid = sys.grid;
    let b = sys.solve_forward_terminal(z0, None, None)?;
    let b_norm = grid.norm(&b);
    let dim = b.len();
    if b_norm == 0.0 {
        let u = ControlField::zeros(grid, sys.omega0);
        return Ok(ControlResult {
            u,
            q: vec![0.0; dim],
            z_terminal: b,
            terminal_norm: 0.0,
            weighted_l2: 0.0,
            linf: 0.0,
            cg_iters: 0,
            eps,
            gramian_residual: 0.0,
            consistency: 0.0,
            energy_trace: Vec::new(),
        });
    }
    let cap = 10 * sys.n_comp() * grid.nx;
    let apply = |v: &[f64]| -> Result<Vec<f64>, HumError> {
        let mut out = gram.apply(v)?;
        axpy(eps, v, &mut out);
        Ok(out)
    };

    let mut q = vec![0.0; dim];
    let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
    let mut iters = 0;
    let mut energy_trace = Vec::new();
    let mut restarts = 0;
    // restarts refresh the recursive residual against the true one
    'outer: loop {
        let mut d = r.clone();
        let mut rr = grid.inner(&r, &r);
        loop {
            let q_norm = grid.norm(&q);
            let target = (CG_REL_TOL * b_norm).min(0.1 * CONSISTENCY_TOL * eps * q_norm);
            if rr.sqrt() <= target && iters > 0 {
                break;
            }
            if iters >= cap {
                return Err(HumError::CgStalled {
                    iterations: iters,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let ad = apply(&d)?;
            let dad = grid.inner(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let alpha = rr / dad;
            axpy(alpha, &d, &mut q);
            axpy(-alpha, &ad, &mut r);
            iters += 1;
            let energy = 0.5 * (grid.inner(&b, &q) - grid.inner(&r, &q));
            energy_trace.push(energy);
            let rr_new = grid.inner(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for (di, ri) in d.iter_mut().zip(&r) {
                *di = ri + beta * *di;
            }
        }
        let aq = apply(&q)?;
        let true_r: Vec<f64> = b.iter().zip(&aq).map(|(bi, ai)| -bi - ai).collect();
        let true_norm = grid.norm(&true_r);
        let target = (CG_REL_TOL * b_norm).min(0.1 * CONSISTENCY_TOL * eps * grid.norm(&q));
        if true_norm <= target * 1.0001 || iters >= cap {
            r = true_r;
            break 'outer;
        }
        r = true_r;
        restarts += 1;
        if restarts > 20 {
            return Err(HumError::CgStalled {
                iterations: iters,
                residual: true_norm / b_norm,
            });
        }
    }

    let (lam_q, p, u) = gram.apply_full(&q)?;
    let z_terminal: Vec<f64> = b.iter().zip(&lam_q).map(|(x, y)| x + y).collect();
    let q_norm = grid.norm(&q);
    let defect: Vec<f64> = q.iter().zip(&z_terminal).map(|(qi, zi)| qi + zi / eps).collect();
    let consistency = grid.norm(&defect) / q_norm;
    let residual = grid.norm(&r) / b_norm;
    if consistency > CONSISTENCY_TOL {
        if iters >= cap {
            return Err(HumError::CgStalled {
                iterations: iters,
                residual,
            });
        }
        return Err(HumError::InconsistentOptimality {
            defect: consistency,
            tol: CONSISTENCY_TOL,
        });
    }
    let nodes = sys.omega0;
    let p0 = ControlField::from_fn(grid, nodes, |m, j| p.at(m, 0, j));
    let (weighted_l2, linf) = control_norms(grid, gram.weights, &u, &p0);
    Ok(ControlResult {
        u,
        q,
        terminal_norm: grid.norm(&z_terminal),
        z_terminal,
        weighted_l2,
        linf,
        cg_iters: iters,
        eps,
        gramian_residual: residual,
        consistency,
        energy_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub terminal_norm: f64,
    pub weighted_l2: f64,
    pub linf: f64,
    pub cg_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log terminal_norm` against `log eps` over the
    /// pre-floor rows.
    pub slope: Option<f64>,
    /// Number of leading rows used for the slope.
    pub pre_floor: usize,
    /// `‖u^{ε_k} − u^{ε_{k+1}}‖_{L²}` for consecutive rows.
    pub cauchy: Vec<f64>,
    /// `max / min` of the weighted norm over the sweep.
    pub weighted_l2_spread: f64,
}

/// Local slopes below this mark the floor.
pub const FLOOR_SLOPE: f64 = 0.1;

/// Drops trailing rows whose local log-log slope is below [`FLOOR_SLOPE`]
/// and fits the remaining ones. Returns `(slope, rows used)`.
pub fn pre_floor_slope(eps: &[f64], norms: &[f64]) -> (Option<f64>, usize) {
    let mut end = eps.len();
    while end >= 2 {
        let (e0, e1) = (eps[end - 2], eps[end - 1]);
        let (n0, n1) = (norms[end - 2], norms[end - 1]);
        let local = if n0 > 0.0 && n1 > 0.0 {
            (n0.ln() - n1.ln()) / (e0.ln() - e1.ln())
        } else {
            0.0
        };
        if local < FLOOR_SLOPE {
            end -= 1;
        } else {
            break;
        }
    }
    if end < 2 {
        return (None, end);
    }
    let xs: Vec<f64> = eps[..end].iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = norms[..end].iter().map(|v| v.ln()).collect();
    (Some(ls_slope(&xs, &ys)), end)
}

/// Ordinary least-squares slope.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// One penalized solve per `eps` (in parallel), plus slope and Cauchy
/// differences.
pub fn eps_sweep(gram: &Gramian, z0: &[f64], eps_list: &[f64]) -> Result<(SweepResult, Vec<ControlResult>), HumError> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HumError::BadEpsList);
    }
    let results = eps_list
        .par_iter()
        .map(|&eps| solve_penalized(gram, z0, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<SweepRow> = results
        .iter()
        .map(|r| SweepRow {
            eps: r.eps,
            terminal_norm: r.terminal_norm,
            weighted_l2: r.weighted_l2,
            linf: r.linf,
            cg_iters: r.cg_iters,
        })
        .collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.terminal_norm).collect();
    let (slope, pre_floor) = pre_floor_slope(eps_list, &norms);
    let cauchy = results
        .windows(2)
        .map(|w| w[0].u.sub(&w[1].u).l2(gram.grid()))
        .collect();
    let wmax = rows.iter().map(|r| r.weighted_l2).fold(0.0, f64::max);
    let wmin = rows.iter().map(|r| r.weighted_l2).fold(f64::INFINITY, f64::min);
    Ok((
        SweepResult {
            rows,
            slope,
            pre_floor,
            cauchy,
            weighted_l2_spread: if wmin > 0.0 { wmax / wmin } else { f64::INFINITY },
        },
        results,
    ))
}

impl SweepResult {
    /// CSV with columns `eps,terminal_norm,weighted_l2,linf,cg_iters` and a
    /// `slope_estimate` footer row.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["eps", "terminal_norm", "weighted_l2", "linf", "cg_iters"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.16e}", r.eps),
                format!("{:.16e}", r.terminal_norm),
                format!("{:.16e}", r.weighted_l2),
                format!("{:.16e}", r.linf),
                r.cg_iters.to_string(),
            ])?;
        }
        let slope = self.slope.map_or("nan".to_string(), |s| format!("{s:.16e}"));
        w.write_record(["slope_estimate".to_string(), slope])?;
        w.flush()?;
        Ok(())
    }
}
