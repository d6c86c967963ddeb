//! Both sides of the weighted energy inequality, empirical constants over
//! random samples, the observability constant by inverse power iteration,
//! and the L∞–L² check.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coupling::{CoefficientSet, CouplingError, CouplingTree};
use crate::geometry::{Grid, NodeRange, SubdomainFamily};
use crate::hum::Gramian;
use crate::pde::{LinearSystem, PdeError, TrajectoryField};
use crate::weights::{exp_weight, WeightFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarlemanError {
    #[error("sample {sample}: lhs = {lhs:.3e} with zero right-hand side")]
    DegenerateSample { sample: usize, lhs: f64 },
    #[error("power iteration stalled after {iterations} iterations: {reason}")]
    PowerIterationStalled { iterations: usize, reason: String },
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// Weighted left-hand side, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LhsTerms {
    pub dt: f64,
    pub dxx: f64,
    pub dx: f64,
    pub p: f64,
    pub total: f64,
}

/// `Σ_c ∫ (|D_t p|² + |∂ₓₓp|² + |∂ₓp|² + |p|²) e^{2sα̲}` over interior levels.
pub fn lhs_energy(grid: &Grid, p: &TrajectoryField, fam: &WeightFamily) -> LhsTerms {
    let nt = grid.nt;
    let nx = grid.nx;
    let (tau, h) = (grid.tau, grid.h);
    let mut t = LhsTerms {
        dt: 0.0,
        dxx: 0.0,
        dx: 0.0,
        p: 0.0,
        total: 0.0,
    };
    for m in 1..nt {
        let w = exp_weight(fam.log_under(2.0, grid.t(m)));
        if w == 0.0 {
            continue;
        }
        let (prev, next, dt_scale) = if nt == 2 {
            (m, m, 0.0)
        } else if m == 1 {
            (1, 2, 1.0 / tau)
        } else if m == nt - 1 {
            (nt - 2, nt - 1, 1.0 / tau)
        } else {
            (m - 1, m + 1, 0.5 / tau)
        };
        let (mut sdt, mut sxx, mut sx, mut sp) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..p.n_comp {
            let cur = p.comp(m, c);
            let a = p.comp(prev, c);
            let b = p.comp(next, c);
            for j in 0..nx {
                let left = if j == 0 { 0.0 } else { cur[j - 1] };
                let right = if j + 1 == nx { 0.0 } else { cur[j + 1] };
                let d_t = (b[j] - a[j]) * dt_scale;
                let d_xx = (left - 2.0 * cur[j] + right) / (h * h);
                let d_x = (right - left) / (2.0 * h);
                sdt += d_t * d_t;
                sxx += d_xx * d_xx;
                sx += d_x * d_x;
                sp += cur[j] * cur[j];
            }
        }
        let f = tau * h * w;
        t.dt += f * sdt;
        t.dxx += f * sxx;
        t.dx += f * sx;
        t.p += f * sp;
    }
    t.total = t.dt + t.dxx + t.dx + t.p;
    t
}

/// `(∫_{Q_{ω0}} |p_0|² e^{2sᾱ}, ∫_Q |g|² e^{2sᾱ})` over interior levels.
pub fn rhs_terms(
    grid: &Grid,
    p: &TrajectoryField,
    omega0: NodeRange,
    g: Option<&TrajectoryField>,
    fam: &WeightFamily,
) -> (f64, f64) {
    let (mut obs, mut src) = (0.0, 0.0);
    for m in 1..grid.nt {
        let w = exp_weight(fam.log_bar(2.0, grid.t(m)));
        if w == 0.0 {
            continue;
        }
        let p0 = p.comp(m, 0);
        obs += w * p0[omega0.first..=omega0.last].iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = g {
            src += w * g.level(m).iter().map(|v| v * v).sum::<f64>();
        }
    }
    let f = grid.tau * grid.h;
    (f * obs, f * src)
}

/// Number of Dirichlet sine modes in random samples.
pub const SAMPLE_MODES: usize = 10;

/// Per component, `Σ_{k≤10} ξ_k sin(kπx/L)` with `ξ_k ~ N(0,1)`.
pub fn random_sine_field(grid: &Grid, n_comp: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n_comp * grid.nx];
    for c in 0..n_comp {
        let coefs: Vec<f64> = (0..SAMPLE_MODES).map(|_| StandardNormal.sample(rng)).collect();
        for j in 0..grid.nx {
            let x = grid.x(j);
            out[c * grid.nx + j] = coefs
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x / grid.length).sin())
                .sum::<f64>();
        }
    }
    out
}

/// Where the coefficients of each sample come from.
#[derive(Debug, Clone, Copy)]
pub enum CoefficientSource<'a> {
    Fixed(&'a CoefficientSet),
    /// A fresh random member of the class per sample.
    RandomClass {
        fam: &'a SubdomainFamily,
        m_bound: f64,
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanSample {
    pub sample_id: usize,
    pub seed: u64,
    pub lhs: f64,
    pub rhs_obs: f64,
    pub rhs_src: f64,
    /// `None` for a skipped 0/0 sample.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanEstimate {
    /// Largest ratio; `None` when every sample was skipped.
    pub c_est: Option<f64>,
    pub worst: Option<CarlemanSample>,
    pub samples: Vec<CarlemanSample>,
    pub s: f64,
    pub lambda: f64,
    pub base_seed: u64,
}

impl CarlemanEstimate {
    /// CSV `sample_id,lhs,rhs_obs,rhs_src,ratio`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_id", "lhs", "rhs_obs", "rhs_src", "ratio"])?;
        for s in &self.samples {
            w.write_record([
                s.sample_id.to_string(),
                format!("{:.16e}", s.lhs),
                format!("{:.16e}", s.rhs_obs),
                format!("{:.16e}", s.rhs_src),
                s.ratio.map_or("nan".to_string(), |r| format!("{r:.16e}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs for one nonhomogeneous adjoint sample.
pub struct SampleData {
    pub p_terminal: Vec<f64>,
    pub source: Option<TrajectoryField>,
}

/// `pT` and a time-constant source `g`, both random sine combinations.
pub fn draw_sample(grid: &Grid, n_comp: usize, seed: u64, with_source: bool) -> SampleData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_terminal = random_sine_field(grid, n_comp, &mut rng);
    let source = with_source.then(|| {
        let g = random_sine_field(grid, n_comp, &mut rng);
        TrajectoryField::from_fn(grid, n_comp, |_, c, j| g[c * grid.nx + j])
    });
    SampleData { p_terminal, source }
}

fn evaluate_sample(
    grid: &Grid,
    tree: &CouplingTree,
    omega0: NodeRange,
    coeffs: &CoefficientSet,
    fam: &WeightFamily,
    data: &SampleData,
    sample_id: usize,
    seed: u64,
) -> Result<CarlemanSample, CarlemanError> {
    let sys = LinearSystem::new(grid, tree, coeffs, omega0)?;
    let p = sys.solve_adjoint(&data.p_terminal, data.source.as_ref())?;
    let lhs = lhs_energy(grid, &p, fam).total;
    let (rhs_obs, rhs_src) = rhs_terms(grid, &p, omega0, data.source.as_ref(), fam);
    let rhs = rhs_obs + rhs_src;
    let ratio = if rhs > 0.0 {
        Some(lhs / rhs)
    } else if lhs == 0.0 {
        None
    } else {
        return Err(CarlemanError::DegenerateSample { sample: sample_id, lhs });
    };
    Ok(CarlemanSample {
        sample_id,
        seed,
        lhs,
        rhs_obs,
        rhs_src,
        ratio,
    })
}

/// Max of `lhs / (rhs_obs + rhs_src)` over `n_samples` nonhomogeneous adjoint
/// solves; sample `i` uses seed `base_seed + i`.
pub fn empirical_constant(
    grid: &Grid,
    tree: &CouplingTree,
    omega0: NodeRange,
    source: CoefficientSource,
    fam: &WeightFamily,
    n_samples: usize,
    base_seed: u64,
) -> Result<CarlemanEstimate, CarlemanError> {
    if n_samples == 0 {
        return Err(CarlemanError::NoSamples);
    }
    let n_comp = tree.n() + 1;
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let data = draw_sample(grid, n_comp, seed, true);
            match source {
                CoefficientSource::Fixed(c) => evaluate_sample(grid, tree, omega0, c, fam, &data, i, seed),
                CoefficientSource::RandomClass { fam: sub, m_bound, delta } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                    let c = CoefficientSet::random_in_class(grid, sub, m_bound, delta, &mut rng)?;
                    evaluate_sample(grid, tree, omega0, &c, fam, &data, i, seed)
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(samples, fam, base_seed))
}

/// Same estimator over caller-supplied samples (e.g. the zero sample).
pub fn empirical_constant_from(
    grid: &Grid,
    tree: &CouplingTree,
    omega0: NodeRange,
    coeffs: &CoefficientSet,
    fam: &WeightFamily,
    data: &[SampleData],
) -> Result<CarlemanEstimate, CarlemanError> {
    if data.is_empty() {
        return Err(CarlemanError::NoSamples);
    }
    let samples = data
        .iter()
        .enumerate()
        .map(|(i, d)| evaluate_sample(grid, tree, omega0, coeffs, fam, d, i, 0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(samples, fam, 0))
}

fn summarize(samples: Vec<CarlemanSample>, fam: &WeightFamily, base_seed: u64) -> CarlemanEstimate {
    let worst = samples
        .iter()
        .filter(|s| s.ratio.is_some())
        .max_by(|a, b| a.ratio.unwrap().total_cmp(&b.ratio.unwrap()))
        .cloned();
    CarlemanEstimate {
        c_est: worst.as_ref().and_then(|w| w.ratio),
        worst,
        samples,
        s: fam.s,
        lambda: fam.lambda,
        base_seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityResult {
    pub constant: f64,
    pub iterations: usize,
    pub quotients: Vec<f64>,
    /// Dimension of the sine subspace the quotient is maximized over.
    pub subspace_dim: usize,
}

/// Sine modes per component spanning the terminal data.
pub const OBS_MODES: usize = SAMPLE_MODES;
pub const OBS_MAX_ITERS: usize = 200;
/// Quotients beyond this mark an unobservable direction.
pub const OBS_QUOTIENT_CAP: f64 = 1e12;

/// `h`-orthonormal sine vectors `sin(kπx/L)` on each component, `k ≤ modes`.
pub fn sine_basis(grid: &Grid, n_comp: usize, modes: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n_comp * modes);
    for c in 0..n_comp {
        for k in 1..=modes.min(grid.nx) {
            let mut v = vec![0.0; n_comp * grid.nx];
            for j in 0..grid.nx {
                v[c * grid.nx + j] = (k as f64 * std::f64::consts::PI * grid.x(j) / grid.length).sin();
            }
            let norm = grid.norm(&v);
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

/// Largest `‖p(0)‖² / ∫_{Q_{ω0}} |p_0|² e^{2sᾱ}` over terminal data in the
/// span of [`sine_basis`], by inverse power iteration `x ← Λ_K^{-1} G_K x`
/// on the projected pencil (`G = Φ Φᵀ`, `Φᵀ: pT ↦ p(0)`, `Φ` the free
/// forward map), started from the projection of `start`.
pub fn observability_constant(
    gram: &Gramian,
    start: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<ObservabilityResult, CarlemanError> {
    let sys = &gram.sys;
    let grid = sys.grid;
    let basis = sine_basis(grid, sys.n_comp(), OBS_MODES);
    let dim = basis.len();
    let images = basis
        .par_iter()
        .map(|v| -> Result<(Vec<f64>, Vec<f64>), PdeError> {
            let p = sys.solve_adjoint(v, None)?;
            Ok((sys.solve_forward_terminal(p.initial(), None, None)?, gram.apply(v)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let project = |m: usize| {
        let mut a = DMatrix::from_fn(dim, dim, |i, j| {
            let img = if m == 0 { &images[j].0 } else { &images[j].1 };
            grid.inner(&basis[i], img)
        });
        a = (&a + a.transpose()) * 0.5;
        a
    };
    let (gk, lk) = (project(0), project(1));
    let Some(chol) = Cholesky::new(lk.clone()) else {
        return Err(CarlemanError::PowerIterationStalled {
            iterations: 0,
            reason: "observation Gramian is singular on the sine subspace".into(),
        });
    };
    let mut x = DVector::from_fn(dim, |i, _| grid.inner(&basis[i], start));
    let norm = x.norm();
    if norm == 0.0 {
        return Err(CarlemanError::PowerIterationStalled {
            iterations: 0,
            reason: "start vector has no component in the sine subspace".into(),
        });
    }
    x /= norm;
    let mut quotients = Vec::new();
    for it in 1..=max_iters {
        let gx = &gk * &x;
        let den = x.dot(&(&lk * &x));
        if !(den > 0.0) {
            return Err(CarlemanError::PowerIterationStalled {
                iterations: it,
                reason: format!("observation energy {den:.3e} vanishes"),
            });
        }
        let q = x.dot(&gx) / den;
        quotients.push(q);
        if !(q <= OBS_QUOTIENT_CAP) {
            return Err(CarlemanError::PowerIterationStalled {
                iterations: it,
                reason: format!("quotient {q:.3e} exceeds {OBS_QUOTIENT_CAP:.0e}"),
            });
        }
        if let [.., a, b] = quotients[..] {
            if (b - a).abs() <= tol * b.abs() {
                return Ok(ObservabilityResult {
                    constant: b,
                    iterations: it,
                    quotients,
                    subspace_dim: dim,
                });
            }
        }
        let y = chol.solve(&gx);
        let ny = y.norm();
        if !(ny.is_finite() && ny > 0.0) {
            return Err(CarlemanError::PowerIterationStalled {
                iterations: it,
                reason: "iterate vanished".into(),
            });
        }
        x = y / ny;
    }
    Err(CarlemanError::PowerIterationStalled {
        iterations: max_iters,
        reason: format!(
            "quotient not settled, last {:.6e}",
            quotients.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinfSample {
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinfReport {
    pub max_ratio: Option<f64>,
    pub delta1: f64,
    pub m0: usize,
    pub samples: Vec<LinfSample>,
}

/// `max |p| e^{(s + m0 δ1) α̲}` over interior levels.
pub fn linf_lhs(grid: &Grid, p: &TrajectoryField, fam: &WeightFamily, delta1: f64, m0: usize) -> f64 {
    let factor = (fam.s + m0 as f64 * delta1) / fam.s;
    let mut worst: f64 = 0.0;
    for m in 1..grid.nt {
        let w = exp_weight(fam.log_under(factor, grid.t(m)));
        if w == 0.0 {
            continue;
        }
        let top = p.level(m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(top * w);
    }
    worst
}

/// Homogeneous-adjoint samples of `‖p e^{(s+m0δ1)α̲}‖_∞ / ‖p_0 e^{sᾱ}‖_{L²(Q_{ω0})}`.
pub fn linf_l2_check(
    gram: &Gramian,
    delta1: f64,
    m0: usize,
    n_samples: usize,
    base_seed: u64,
) -> Result<LinfReport, CarlemanError> {
    if n_samples == 0 {
        return Err(CarlemanError::NoSamples);
    }
    let sys = &gram.sys;
    let grid = sys.grid;
    let fam = gram.weights;
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let data = draw_sample(grid, sys.n_comp(), base_seed.wrapping_add(i as u64), false);
            let p = sys.solve_adjoint(&data.p_terminal, None)?;
            Ok(linf_sample(grid, &p, sys.omega0, fam, delta1, m0, i))
        })
        .collect::<Result<Vec<_>, CarlemanError>>()?;
    let max_ratio = samples.iter().filter_map(|s| s.ratio).fold(None, |m: Option<f64>, r| {
        Some(m.map_or(r, |v| v.max(r)))
    });
    Ok(LinfReport {
        max_ratio,
        delta1,
        m0,
        samples,
    })
}

/// One L∞–L² sample for a given adjoint.
pub fn linf_sample(
    grid: &Grid,
    p: &TrajectoryField,
    omega0: NodeRange,
    fam: &WeightFamily,
    delta1: f64,
    m0: usize,
    sample_id: usize,
) -> LinfSample {
    let lhs = linf_lhs(grid, p, fam, delta1, m0);
    let rhs = rhs_terms(grid, p, omega0, None, fam).0.sqrt();
    let ratio = if rhs > 0.0 { Some(lhs / rhs) } else { None };
    LinfSample {
        sample_id,
        lhs,
        rhs,
        ratio,
    }
}
