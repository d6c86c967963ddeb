//! Forward solver for the coupled system, its exact discrete transpose, the
//! duality bookkeeping, and the stationary elliptic Newton solver.
//!
//! One forward step `m -> m+1`:
//!
//! ```text
//! M w      = z^m + τ χ_{ω0} u^m e_0 + τ g^{m+1}     (implicit diffusion + c)
//! z^{m+1}  = N w,   (N w)_i = w_i + τ a_i w_{k(i)}   (lower triangular coupling)
//! ```
//!
//! with `M_c = I - τ Δ_h - τ diag(c_c^{m+1})` and `N` built from
//! `a^{m+1}`. The adjoint runs `p^m = M^{-1}(Nᵀ p^{m+1} + τ g^m)`, which makes
//! `⟨z^{m+1}, p^{m+1}⟩ = ⟨z^m, p^m⟩ + τ ⟨u^m, p_0^m⟩_{ω0}` an algebraic identity.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::coupling::{CoefficientSet, CouplingTree};
use crate::geometry::{Grid, NodeRange};
use crate::nonlinear::NonlinearSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("tridiagonal solve at level {level}, component {component} is not diagonally dominant (1 - tau c = {pivot:.3e})")]
    SingularStep {
        level: usize,
        component: usize,
        pivot: f64,
    },
    #[error("non-finite state at level {level}")]
    NonFiniteState { level: usize },
    #[error("Newton iteration for component {component} stalled after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged {
        component: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Space-time array `[level 0..=Nt][component 0..=n][node 0..Nx)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryField {
    pub nx: usize,
    pub n_comp: usize,
    pub nt: usize,
    data: Vec<f64>,
}

impl TrajectoryField {
    pub fn zeros(grid: &Grid, n_comp: usize) -> Self {
        Self {
            nx: grid.nx,
            n_comp,
            nt: grid.nt,
            data: vec![0.0; (grid.nt + 1) * n_comp * grid.nx],
        }
    }

    /// Field whose every level is built by `f(m, c, j)`.
    pub fn from_fn(grid: &Grid, n_comp: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid, n_comp);
        for m in 0..=grid.nt {
            for c in 0..n_comp {
                for j in 0..grid.nx {
                    out.data[(m * n_comp + c) * grid.nx + j] = f(m, c, j);
                }
            }
        }
        out
    }

    #[inline]
    fn stride(&self) -> usize {
        self.n_comp * self.nx
    }

    /// All components at level `m`, component-major.
    pub fn level(&self, m: usize) -> &[f64] {
        &self.data[m * self.stride()..(m + 1) * self.stride()]
    }

    pub fn level_mut(&mut self, m: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[m * s..(m + 1) * s]
    }

    pub fn comp(&self, m: usize, c: usize) -> &[f64] {
        let start = m * self.stride() + c * self.nx;
        &self.data[start..start + self.nx]
    }

    pub fn at(&self, m: usize, c: usize, j: usize) -> f64 {
        self.data[(m * self.n_comp + c) * self.nx + j]
    }

    pub fn initial(&self) -> &[f64] {
        self.level(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.level(self.nt)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &TrajectoryField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV with header `t,x,component,value`.
    pub fn write_csv<W: Write>(&self, grid: &Grid, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "component", "value"])?;
        for m in 0..=self.nt {
            for c in 0..self.n_comp {
                for j in 0..self.nx {
                    w.write_record([
                        format!("{:.16e}", grid.t(m)),
                        format!("{:.16e}", grid.x(j)),
                        c.to_string(),
                        format!("{:.16e}", self.at(m, c, j)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Control values on `Q_{ω0}`: `[level 0..=Nt][node of ω0]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlField {
    pub nodes: NodeRange,
    pub nt: usize,
    data: Vec<f64>,
}

impl ControlField {
    pub fn zeros(grid: &Grid, nodes: NodeRange) -> Self {
        Self {
            nodes,
            nt: grid.nt,
            data: vec![0.0; (grid.nt + 1) * nodes.len()],
        }
    }

    /// `f(m, j)` with `j` the global node index.
    pub fn from_fn(grid: &Grid, nodes: NodeRange, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid, nodes);
        for m in 0..=grid.nt {
            for (k, j) in nodes.iter().enumerate() {
                out.data[m * nodes.len() + k] = f(m, j);
            }
        }
        out
    }

    pub fn level(&self, m: usize) -> &[f64] {
        let w = self.nodes.len();
        &self.data[m * w..(m + 1) * w]
    }

    pub fn level_mut(&mut self, m: usize) -> &mut [f64] {
        let w = self.nodes.len();
        &mut self.data[m * w..(m + 1) * w]
    }

    /// `χ_{ω0} u^m` on the full grid.
    pub fn extend(&self, grid: &Grid, m: usize) -> Vec<f64> {
        let mut full = vec![0.0; grid.nx];
        full[self.nodes.first..=self.nodes.last].copy_from_slice(self.level(m));
        full
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(τ h Σ_{m<Nt} Σ_j |u|²)^{1/2}`.
    pub fn l2(&self, grid: &Grid) -> f64 {
        let w = self.nodes.len();
        let sum: f64 = self.data[..self.nt * w].iter().map(|v| v * v).sum();
        (grid.tau * grid.h * sum).sqrt()
    }

    pub fn sub(&self, other: &ControlField) -> ControlField {
        ControlField {
            nodes: self.nodes,
            nt: self.nt,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Thomas algorithm for a tridiagonal matrix with constant off-diagonal
/// `off` and diagonal `diag`. Returns `false` on a vanishing pivot.
pub fn thomas_const_off(off: f64, diag: &[f64], rhs: &[f64], out: &mut [f64], scratch: &mut [f64]) -> bool {
    let n = diag.len();
    let mut beta = diag[0];
    if beta == 0.0 {
        return false;
    }
    out[0] = rhs[0] / beta;
    for j in 1..n {
        scratch[j] = off / beta;
        beta = diag[j] - off * scratch[j];
        if beta == 0.0 {
            return false;
        }
        out[j] = (rhs[j] - off * out[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        out[j] -= scratch[j + 1] * out[j + 1];
    }
    true
}

/// `(I - τΔ_h - τ diag(c)) v` with zero Dirichlet data.
fn apply_m(r: f64, tau: f64, c: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for j in 0..n {
        let left = if j == 0 { 0.0 } else { v[j - 1] };
        let right = if j + 1 == n { 0.0 } else { v[j + 1] };
        out[j] = (1.0 + 2.0 * r - tau * c[j]) * v[j] - r * (left + right);
    }
}

/// The coupled linear system on a grid, with its control region.
#[derive(Debug, Clone, Copy)]
pub struct LinearSystem<'a> {
    pub grid: &'a Grid,
    pub tree: &'a CouplingTree,
    pub coeffs: &'a CoefficientSet,
    pub omega0: NodeRange,
}

struct Scratch {
    diag: Vec<f64>,
    rhs: Vec<f64>,
    tmp: Vec<f64>,
    work: Vec<f64>,
}

impl Scratch {
    fn new(nx: usize, n_comp: usize) -> Self {
        Self {
            diag: vec![0.0; nx],
            rhs: vec![0.0; nx],
            tmp: vec![0.0; nx],
            work: vec![0.0; nx * n_comp],
        }
    }
}

impl<'a> LinearSystem<'a> {
    pub fn new(
        grid: &'a Grid,
        tree: &'a CouplingTree,
        coeffs: &'a CoefficientSet,
        omega0: NodeRange,
    ) -> Result<Self, PdeError> {
        if coeffs.n() != tree.n() {
            return Err(PdeError::Shape(format!(
                "coefficients have n = {}, tree has n = {}",
                coeffs.n(),
                tree.n()
            )));
        }
        Ok(Self {
            grid,
            tree,
            coeffs,
            omega0,
        })
    }

    pub fn n_comp(&self) -> usize {
        self.tree.n() + 1
    }

    fn r(&self) -> f64 {
        self.grid.tau / (self.grid.h * self.grid.h)
    }

    /// Solves `M_c^{level} x = rhs` in place of `out`.
    fn solve_m(
        &self,
        level: usize,
        c: usize,
        rhs: &[f64],
        out: &mut [f64],
        diag: &mut [f64],
        tmp: &mut [f64],
    ) -> Result<(), PdeError> {
        let tau = self.grid.tau;
        let r = self.r();
        let cc = self.coeffs.c(c).level(level);
        for j in 0..self.grid.nx {
            let pivot = 1.0 - tau * cc[j];
            if !(pivot > 0.0) {
                return Err(PdeError::SingularStep {
                    level,
                    component: c,
                    pivot,
                });
            }
            diag[j] = 2.0 * r + pivot;
        }
        if !thomas_const_off(-r, diag, rhs, out, tmp) {
            return Err(PdeError::SingularStep {
                level,
                component: c,
                pivot: 0.0,
            });
        }
        Ok(())
    }

    fn check_shape(&self, field: &[f64], what: &str) -> Result<(), PdeError> {
        if field.len() != self.n_comp() * self.grid.nx {
            return Err(PdeError::Shape(format!(
                "{what} has length {}, expected {}",
                field.len(),
                self.n_comp() * self.grid.nx
            )));
        }
        Ok(())
    }

    /// One step `z^m -> z^{m+1}`.
    fn forward_step(
        &self,
        m: usize,
        z: &[f64],
        u: Option<&ControlField>,
        g: Option<&TrajectoryField>,
        out: &mut [f64],
        s: &mut Scratch,
    ) -> Result<(), PdeError> {
        let nx = self.grid.nx;
        let tau = self.grid.tau;
        let level = m + 1;
        let Scratch { diag, rhs, tmp, work } = s;
        for c in 0..self.n_comp() {
            rhs.copy_from_slice(&z[c * nx..(c + 1) * nx]);
            if let Some(g) = g {
                for (r, gv) in rhs.iter_mut().zip(g.comp(level, c)) {
                    *r += tau * gv;
                }
            }
            if c == 0 {
                if let Some(u) = u {
                    for (k, j) in self.omega0.iter().enumerate() {
                        rhs[j] += tau * u.level(m)[k];
                    }
                }
            }
            self.solve_m(level, c, rhs, &mut work[c * nx..(c + 1) * nx], diag, tmp)?;
        }
        out.copy_from_slice(work);
        for i in 1..self.n_comp() {
            let p = self.tree.parent(i);
            let a = self.coeffs.a(i).level(level);
            for j in 0..nx {
                out[i * nx + j] += tau * a[j] * work[p * nx + j];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::NonFiniteState { level });
        }
        Ok(())
    }

    /// Full forward trajectory from `z0` with control `u` and source `g`.
    pub fn solve_forward(
        &self,
        z0: &[f64],
        u: Option<&ControlField>,
        g: Option<&TrajectoryField>,
    ) -> Result<TrajectoryField, PdeError> {
        self.check_shape(z0, "z0")?;
        let mut traj = TrajectoryField::zeros(self.grid, self.n_comp());
        traj.level_mut(0).copy_from_slice(z0);
        let mut s = Scratch::new(self.grid.nx, self.n_comp());
        let mut next = vec![0.0; z0.len()];
        for m in 0..self.grid.nt {
            self.forward_step(m, traj.level(m), u, g, &mut next, &mut s)?;
            traj.level_mut(m + 1).copy_from_slice(&next);
        }
        Ok(traj)
    }

    /// Terminal state only, without storing the trajectory.
    pub fn solve_forward_terminal(
        &self,
        z0: &[f64],
        u: Option<&ControlField>,
        g: Option<&TrajectoryField>,
    ) -> Result<Vec<f64>, PdeError> {
        self.check_shape(z0, "z0")?;
        let mut s = Scratch::new(self.grid.nx, self.n_comp());
        let mut z = z0.to_vec();
        let mut next = vec![0.0; z0.len()];
        for m in 0..self.grid.nt {
            self.forward_step(m, &z, u, g, &mut next, &mut s)?;
            std::mem::swap(&mut z, &mut next);
        }
        Ok(z)
    }

    /// `(Nᵀ p)_j = p_j + τ Σ_{l: k(l)=j} a_l p_l` at `level`.
    fn apply_nt(&self, level: usize, p: &[f64], out: &mut [f64]) {
        let nx = self.grid.nx;
        let tau = self.grid.tau;
        out.copy_from_slice(p);
        for l in 1..self.n_comp() {
            let j = self.tree.parent(l);
            let a = self.coeffs.a(l).level(level);
            for x in 0..nx {
                out[j * nx + x] += tau * a[x] * p[l * nx + x];
            }
        }
    }

    /// Backward march `p^m = M_{m+1}^{-1}(N_{m+1}ᵀ p^{m+1} + τ g^m)`.
    pub fn solve_adjoint(&self, p_terminal: &[f64], g: Option<&TrajectoryField>) -> Result<TrajectoryField, PdeError> {
        self.check_shape(p_terminal, "pT")?;
        let nx = self.grid.nx;
        let tau = self.grid.tau;
        let mut traj = TrajectoryField::zeros(self.grid, self.n_comp());
        traj.level_mut(self.grid.nt).copy_from_slice(p_terminal);
        let mut s = Scratch::new(nx, self.n_comp());
        let mut v = vec![0.0; p_terminal.len()];
        let mut next = vec![0.0; p_terminal.len()];
        for m in (0..self.grid.nt).rev() {
            self.apply_nt(m + 1, traj.level(m + 1), &mut v);
            if let Some(g) = g {
                for (vv, gv) in v.iter_mut().zip(g.level(m)) {
                    *vv += tau * gv;
                }
            }
            for c in 0..self.n_comp() {
                self.solve_m(
                    m + 1,
                    c,
                    &v[c * nx..(c + 1) * nx],
                    &mut next[c * nx..(c + 1) * nx],
                    &mut s.diag,
                    &mut s.tmp,
                )?;
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(PdeError::NonFiniteState { level: m });
            }
            traj.level_mut(m).copy_from_slice(&next);
        }
        Ok(traj)
    }

    /// Backward march with the factors in the wrong order,
    /// `p^m = N_{m+1}ᵀ M_{m+1}^{-1} p^{m+1}`. Consistent with the adjoint
    /// equation but not the transpose of the forward step; only useful as a
    /// negative control for [`LinearSystem::duality_residual_with`].
    pub fn solve_adjoint_unpaired(&self, p_terminal: &[f64]) -> Result<TrajectoryField, PdeError> {
        self.check_shape(p_terminal, "pT")?;
        let nx = self.grid.nx;
        let mut traj = TrajectoryField::zeros(self.grid, self.n_comp());
        traj.level_mut(self.grid.nt).copy_from_slice(p_terminal);
        let mut s = Scratch::new(nx, self.n_comp());
        let mut q = vec![0.0; p_terminal.len()];
        let mut next = vec![0.0; p_terminal.len()];
        for m in (0..self.grid.nt).rev() {
            for c in 0..self.n_comp() {
                self.solve_m(
                    m + 1,
                    c,
                    &traj.level(m + 1)[c * nx..(c + 1) * nx],
                    &mut q[c * nx..(c + 1) * nx],
                    &mut s.diag,
                    &mut s.tmp,
                )?;
            }
            self.apply_nt(m + 1, &q, &mut next);
            traj.level_mut(m).copy_from_slice(&next);
        }
        Ok(traj)
    }

    /// `⟨a, b⟩_h` summed over components.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.inner(a, b)
    }

    /// `Σ_{m<Nt} τ ⟨u^m, p_0^m⟩_{ω0}`.
    pub fn control_pairing(&self, u: &ControlField, p: &TrajectoryField) -> f64 {
        let mut total = 0.0;
        for m in 0..self.grid.nt {
            let p0 = &p.comp(m, 0)[self.omega0.first..=self.omega0.last];
            total += self.grid.inner(u.level(m), p0);
        }
        self.grid.tau * total
    }

    /// `|⟨z(T),pT⟩ − ⟨z0,p(0)⟩ − Σ τ⟨u,p_0⟩_{ω0}| / (1 + |⟨z(T),pT⟩|)` with
    /// the transposed adjoint.
    pub fn duality_residual(&self, z0: &[f64], u: &ControlField, p_terminal: &[f64]) -> Result<f64, PdeError> {
        let p = self.solve_adjoint(p_terminal, None)?;
        self.duality_residual_with(z0, u, &p)
    }

    /// Same bookkeeping against a given adjoint trajectory.
    pub fn duality_residual_with(&self, z0: &[f64], u: &ControlField, p: &TrajectoryField) -> Result<f64, PdeError> {
        let z_t = self.solve_forward_terminal(z0, Some(u), None)?;
        let end = self.inner(&z_t, p.terminal());
        let start = self.inner(z0, p.initial());
        let pairing = self.control_pairing(u, p);
        Ok((end - start - pairing).abs() / (1.0 + end.abs()))
    }

    /// Largest per-step residual `‖M w − rhs‖∞ / (1 + ‖rhs‖∞)` of a stored
    /// forward trajectory, with `w = N^{-1} z^{m+1}` recovered in tree order.
    pub fn scheme_residual(
        &self,
        traj: &TrajectoryField,
        u: Option<&ControlField>,
        g: Option<&TrajectoryField>,
    ) -> f64 {
        let nx = self.grid.nx;
        let tau = self.grid.tau;
        let r = self.r();
        let mut worst: f64 = 0.0;
        let mut w = vec![0.0; nx * self.n_comp()];
        let mut mw = vec![0.0; nx];
        for m in 0..self.grid.nt {
            let level = m + 1;
            let z_next = traj.level(level);
            for i in self.tree.root_first_order() {
                for x in 0..nx {
                    let mut v = z_next[i * nx + x];
                    if i > 0 {
                        let p = self.tree.parent(i);
                        v -= tau * self.coeffs.a(i).at(level, x) * w[p * nx + x];
                    }
                    w[i * nx + x] = v;
                }
            }
            for c in 0..self.n_comp() {
                let mut rhs = traj.comp(m, c).to_vec();
                if let Some(g) = g {
                    for (rv, gv) in rhs.iter_mut().zip(g.comp(level, c)) {
                        *rv += tau * gv;
                    }
                }
                if c == 0 {
                    if let Some(u) = u {
                        for (k, j) in self.omega0.iter().enumerate() {
                            rhs[j] += tau * u.level(m)[k];
                        }
                    }
                }
                apply_m(r, tau, self.coeffs.c(c).level(level), &w[c * nx..(c + 1) * nx], &mut mw);
                let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let res = mw.iter().zip(&rhs).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                worst = worst.max(res / scale);
            }
        }
        worst
    }
}

/// Per-component outcome of the stationary Newton solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    pub component: usize,
    pub iterations: usize,
    /// `‖R‖∞` after each iteration, starting with the initial guess.
    pub residuals: Vec<f64>,
}

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 50;

/// Newton with backtracking for `−Δ_h y − f(j, y) = gbar`, where `f`
/// returns `(f, ∂f/∂y)`.
pub fn newton_elliptic(
    grid: &Grid,
    component: usize,
    gbar: &[f64],
    guess: &[f64],
    f: impl Fn(usize, f64) -> (f64, f64),
) -> Result<(Vec<f64>, NewtonReport), PdeError> {
    let nx = grid.nx;
    let ih2 = 1.0 / (grid.h * grid.h);
    let residual = |y: &[f64], out: &mut [f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..nx {
            let left = if j == 0 { 0.0 } else { y[j - 1] };
            let right = if j + 1 == nx { 0.0 } else { y[j + 1] };
            let r = (2.0 * y[j] - left - right) * ih2 - f(j, y[j]).0 - gbar[j];
            out[j] = r;
            worst = worst.max(r.abs());
        }
        worst
    };
    let mut y = guess.to_vec();
    let mut res = vec![0.0; nx];
    let mut norm = residual(&y, &mut res);
    let mut report = NewtonReport {
        component,
        iterations: 0,
        residuals: vec![norm],
    };
    let mut diag = vec![0.0; nx];
    let mut step = vec![0.0; nx];
    let mut scratch = vec![0.0; nx];
    let mut trial = vec![0.0; nx];
    let mut trial_res = vec![0.0; nx];
    while norm > NEWTON_TOL {
        if report.iterations >= NEWTON_MAX_ITERS {
            return Err(PdeError::NewtonDiverged {
                component,
                iterations: report.iterations,
                residual: norm,
            });
        }
        for j in 0..nx {
            diag[j] = 2.0 * ih2 - f(j, y[j]).1;
        }
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        if !thomas_const_off(-ih2, &diag, &neg, &mut step, &mut scratch) {
            return Err(PdeError::NewtonDiverged {
                component,
                iterations: report.iterations,
                residual: norm,
            });
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            for j in 0..nx {
                trial[j] = y[j] + lambda * step[j];
            }
            let t = residual(&trial, &mut trial_res);
            if t.is_finite() && t < norm {
                std::mem::swap(&mut y, &mut trial);
                std::mem::swap(&mut res, &mut trial_res);
                norm = t;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        report.iterations += 1;
        report.residuals.push(norm);
        if !accepted {
            return Err(PdeError::NewtonDiverged {
                component,
                iterations: report.iterations,
                residual: norm,
            });
        }
    }
    Ok((y, report))
}

/// Stationary state `−Δȳ_0 = ḡ_0 + f_0(ȳ_0)`, `−Δȳ_i = ḡ_i + f_i(ȳ_{k(i)}, ȳ_i)`,
/// solved component by component in tree order from the zero guess.
pub fn solve_elliptic_stationary(
    spec: &NonlinearSpec,
    grid: &Grid,
) -> Result<(Vec<Vec<f64>>, Vec<NewtonReport>), PdeError> {
    let n_comp = spec.tree.n() + 1;
    let mut ybar: Vec<Vec<f64>> = vec![vec![0.0; grid.nx]; n_comp];
    let mut reports = Vec::with_capacity(n_comp);
    for i in spec.tree.root_first_order() {
        let parent = if i == 0 { None } else { Some(ybar[spec.tree.parent(i)].clone()) };
        let guess = vec![0.0; grid.nx];
        let (y, report) = newton_elliptic(grid, i, &spec.gbar[i], &guess, |j, yi| {
            let yp = parent.as_ref().map_or(0.0, |p| p[j]);
            (spec.f(i, j, yp, yi), spec.df_dself(i, j, yp, yi))
        })?;
        ybar[i] = y;
        reports.push(report);
    }
    Ok((ybar, reports))
}
