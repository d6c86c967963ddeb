//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any FAIL.

use std::time::{Duration, Instant};

use nullctl::carleman::{empirical_constant, random_sine_field, CoefficientSource};
use nullctl::cli::{Runner, Subcommand};
use nullctl::coupling::{CoefficientSet, CouplingTree, SpaceTimeField};
use nullctl::geometry::{Grid, NodeRange};
use nullctl::hum::{eps_sweep, solve_penalized, Gramian};
use nullctl::nonlinear::{fixed_point_control, linearize_coeffs, FixedPointParams, NonlinearError};
use nullctl::pde::{ControlField, LinearSystem, TrajectoryField};
use nullctl::scenario::{LoadedScenario, Setup, PRESETS};
use nullctl::weights::{check_weight_order, sigma_sequence, WeightFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const KALMAN_RUNTIME: Duration = Duration::from_secs(1);
const DUALITY_TOL: f64 = 1e-10;
const DUALITY_RUNTIME: Duration = Duration::from_secs(30);
const GRAMIAN_TOL: f64 = 1e-10;
const SLOPE_TARGET: f64 = 0.5;
const SLOPE_BAND: f64 = 0.15;
const SPREAD_MAX: f64 = 2.0;
const SWEEP_RUNTIME: Duration = Duration::from_secs(300);
const NEGATIVE_TOL: f64 = 1e-6;
const CARLEMAN_PINNED: f64 = 3.130_437_705_795_898_8;
const CARLEMAN_PIN_TOL: f64 = 1e-12;
const CARLEMAN_DRIFT_MAX: f64 = 0.2;
const ORDER_M0: u32 = 8;
const PICARD_MAX: usize = 10;
const FLOOR_FACTOR: f64 = 2.0;
const NONLINEAR_RUNTIME: Duration = Duration::from_secs(600);
const ORDER_BAND: f64 = 0.2;
const SAMPLES: usize = 100;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn preset(name: &str, overrides: &[&str]) -> (LoadedScenario, Setup) {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let loaded = LoadedScenario::preset(name, &o).expect("preset loads");
    let setup = loaded.scenario.build().expect("preset builds");
    (loaded, setup)
}

fn system(s: &Setup) -> LinearSystem<'_> {
    LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap()
}

fn random_control(grid: &Grid, nodes: NodeRange, rng: &mut ChaCha8Rng) -> ControlField {
    let c: Vec<f64> = (0..12).map(|_| StandardNormal.sample(rng)).collect();
    let pi = std::f64::consts::PI;
    ControlField::from_fn(grid, nodes, |m, j| {
        let (t, x) = (grid.t(m) / grid.horizon, grid.x(j) / grid.length);
        (0..4)
            .map(|k| {
                let kk = (k + 1) as f64;
                (c[3 * k] + c[3 * k + 1] * (pi * kk * t).cos() + c[3 * k + 2] * (pi * t).sin()) * (kk * pi * x).sin()
            })
            .sum()
    })
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut ranks = Vec::new();
    for name in ["kalman-neg", "kalman-neg-tree"] {
        let loaded = LoadedScenario::preset(name, &[]).unwrap();
        let a = Runner::new(&loaded, dir.path(), None).run(Subcommand::Kalman).unwrap();
        ranks.push(a.report["rank"].as_u64().unwrap());
    }
    let elapsed = t0.elapsed();
    outcome(
        ranks == [2, 3] && elapsed < KALMAN_RUNTIME,
        format!("ranks {ranks:?} (want [2, 3]) in {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for name in ["star2", "tree4"] {
        let t0 = Instant::now();
        let (_, s) = preset(name, &[]);
        let sys = system(&s);
        let n_comp = sys.n_comp();
        for i in 0..SAMPLES {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let z0 = random_sine_field(&s.grid, n_comp, &mut rng);
            let pt = random_sine_field(&s.grid, n_comp, &mut rng);
            let u = random_control(&s.grid, s.family.omega0.nodes, &mut rng);
            worst = worst.max(sys.duality_residual(&z0, &u, &pt).unwrap());
        }
        slowest = slowest.max(t0.elapsed());
    }
    outcome(
        worst <= DUALITY_TOL && slowest < DUALITY_RUNTIME,
        format!("max residual {worst:.2e} (tol {DUALITY_TOL:.0e}), slowest preset {slowest:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_sym: f64 = 0.0;
    let mut worst_psd: f64 = 0.0;
    let mut min_quad = f64::INFINITY;
    for (name, _) in PRESETS {
        let (_, s) = preset(name, &[]);
        let sys = system(&s);
        let gram = Gramian::new(sys, &s.weights);
        let n_comp = sys.n_comp();
        let g = &s.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..SAMPLES)
            .map(|_| (random_sine_field(g, n_comp, &mut rng), random_sine_field(g, n_comp, &mut rng)))
            .collect();
        let applied: Vec<_> = pairs
            .iter()
            .map(|(a, b)| (gram.apply_full(a).unwrap(), gram.apply(b).unwrap()))
            .collect();
        let op_norm = applied
            .iter()
            .zip(&pairs)
            .map(|(((la, _, _), _), (a, _))| g.norm(la) / g.norm(a))
            .fold(0.0, f64::max);
        for (((la, pa, _), lb), (a, b)) in applied.iter().zip(&pairs) {
            let scale = g.norm(a) * g.norm(b) * op_norm;
            worst_sym = worst_sym.max((g.inner(la, b) - g.inner(a, lb)).abs() / scale);
            let quad = g.inner(la, a);
            let energy = gram.weighted_energy(pa);
            min_quad = min_quad.min(quad / (g.norm(a).powi(2) * op_norm));
            worst_psd = worst_psd.max((quad - energy).abs() / energy.abs().max(f64::MIN_POSITIVE));
        }
    }
    outcome(
        worst_sym <= GRAMIAN_TOL && worst_psd <= GRAMIAN_TOL && min_quad >= -GRAMIAN_TOL,
        format!(
            "symmetry defect {worst_sym:.2e}, energy identity defect {worst_psd:.2e}, min <Lq,q>/|q|^2|L| {min_quad:.2e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["star2", "tree4"] {
        let (loaded, s) = preset(name, &[]);
        let sys = system(&s);
        let gram = Gramian::new(sys, &s.weights);
        let (sweep, _) = eps_sweep(&gram, &s.z0, &loaded.scenario.run.eps_list).unwrap();
        let slope = sweep.slope.unwrap_or(f64::NAN);
        ok &= (slope - SLOPE_TARGET).abs() <= SLOPE_BAND && sweep.weighted_l2_spread <= SPREAD_MAX;
        parts.push(format!(
            "{name}: slope {slope:.3} over {} rows, weighted spread {:.3}",
            sweep.pre_floor, sweep.weighted_l2_spread
        ));
    }
    let elapsed = t0.elapsed();
    outcome(ok && elapsed < SWEEP_RUNTIME, format!("{}; {elapsed:.1?}", parts.join("; ")))
}

/// `(I − τΔ_h)^{-Nt} w` through the discrete sine transform.
fn discrete_heat(grid: &Grid, w: &[f64]) -> Vec<f64> {
    let n = grid.nx;
    let pi = std::f64::consts::PI;
    let mut out = vec![0.0; n];
    for k in 1..=n {
        let phi: Vec<f64> = (0..n).map(|j| (k as f64 * pi * grid.x(j) / grid.length).sin()).collect();
        let coef = 2.0 / (n as f64 + 1.0) * phi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let lam = 4.0 / (grid.h * grid.h) * (k as f64 * pi * grid.h / (2.0 * grid.length)).sin().powi(2);
        let decay = (1.0 + grid.tau * lam).powi(-(grid.nt as i32));
        for j in 0..n {
            out[j] += coef * decay * phi[j];
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let (_, s) = preset("kalman-neg", &[]);
    let sys = system(&s);
    let gram = Gramian::new(sys, &s.weights);
    let g = &s.grid;
    let nx = g.nx;
    let w0: Vec<f64> = (0..nx).map(|j| s.z0[nx + j] - s.z0[2 * nx + j]).collect();
    let expected = discrete_heat(g, &w0);
    let exp_norm = g.norm(&expected);
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
        let r = solve_penalized(&gram, &s.z0, eps).unwrap();
        let diff: Vec<f64> = (0..nx).map(|j| r.z_terminal[nx + j] - r.z_terminal[2 * nx + j]).collect();
        let err: Vec<f64> = diff.iter().zip(&expected).map(|(a, b)| a - b).collect();
        let rel = g.norm(&err) / exp_norm;
        worst = worst.max(rel);
        notes.push(format!("{eps:.0e}:{:.4e}", g.norm(&diff)));
    }
    outcome(
        worst <= NEGATIVE_TOL,
        format!(
            "|z1(T)-z2(T)| {} vs closed form {exp_norm:.4e}, max rel err {worst:.2e}",
            notes.join(" ")
        ),
    )
}

fn carleman_at(overrides: &[&str]) -> f64 {
    let (loaded, s) = preset("star2", overrides);
    let est = empirical_constant(
        &s.grid,
        &s.tree,
        s.family.omega0.nodes,
        CoefficientSource::Fixed(&s.coeffs),
        &s.weights,
        SAMPLES,
        loaded.scenario.run.seed,
    )
    .expect("no degenerate samples");
    let degenerate = est.samples.iter().any(|x| x.lhs > 0.0 && x.rhs_obs + x.rhs_src == 0.0);
    assert!(!degenerate);
    est.c_est.unwrap_or(f64::INFINITY)
}

fn criterion_6() -> Outcome {
    let base = carleman_at(&[]);
    let fine = carleman_at(&["grid.Nx=199", "grid.Nt=400"]);
    let pin = (base - CARLEMAN_PINNED).abs() / CARLEMAN_PINNED;
    let drift = (fine - base).abs() / base;
    outcome(
        base.is_finite() && pin <= CARLEMAN_PIN_TOL && drift < CARLEMAN_DRIFT_MAX,
        format!("C_est {base:.12e} (pin rel diff {pin:.1e}), refined {fine:.6e}, drift {:.2}%", 100.0 * drift),
    )
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, _) in PRESETS {
        let (loaded, s) = preset(name, &[]);
        let w: &WeightFamily = &s.weights;
        let positive = w
            .certificate
            .checks
            .iter()
            .all(|c| c.passed && c.margin.is_none_or(|m| m > 0.0));
        let order = check_weight_order(w, &s.grid, ORDER_M0, &[w.lambda], &loaded.scenario.s_grid());
        let finite = order.all_finite();
        let worst = order
            .thresholds
            .iter()
            .filter_map(|t| t.s_threshold)
            .fold(0.0, f64::max);
        ok &= positive && finite;
        parts.push(format!("{name}: margins {positive}, s* {worst:.2e}"));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let (s1, s2, s3) = (sigma_sequence(1), sigma_sequence(2), sigma_sequence(3));
    let ok = s2.m0 == 1
        && s2.sigma == [2.0, 3.0]
        && s3.m0 == 1
        && s3.sigma == [2.0, 10.0]
        && s1.edge_case
        && !s2.edge_case
        && !s3.edge_case;
    outcome(
        ok,
        format!(
            "N=1 {:?} edge {}, N=2 {:?} m0 {}, N=3 {:?} m0 {}",
            s1.sigma, s1.edge_case, s2.sigma, s2.m0, s3.sigma, s3.m0
        ),
    )
}

fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    let (loaded, s) = preset("nonlinear-star2", &[]);
    let run = &loaded.scenario.run;
    let nl = s.nonlinear.as_ref().unwrap();
    let params = FixedPointParams {
        beta0: run.beta0,
        eps: run.eps,
        tol: run.tol,
        max_iters: run.max_iters,
    };
    let nx = s.grid.nx;
    let y0 = |z0: &[f64]| -> Vec<f64> { z0.iter().enumerate().map(|(k, z)| nl.ybar[k / nx][k % nx] + z).collect() };
    let z0_sup = s.z0.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    // linear floor: penalized control of the system linearized at ȳ
    let zero = TrajectoryField::zeros(&s.grid, s.tree.n() + 1);
    let lin = linearize_coeffs(&nl.spec, &s.grid, &nl.ybar, &zero, 1.0, 0.5).unwrap();
    let sys = LinearSystem::new(&s.grid, &s.tree, &lin, s.family.omega0.nodes).unwrap();
    let floor = solve_penalized(&Gramian::new(sys, &s.weights), &s.z0, run.eps).unwrap().terminal_norm;

    let small = fixed_point_control(&nl.spec, &s.grid, &s.family, &s.weights, &nl.ybar, &y0(&s.z0), &params);
    let (conv_ok, conv_detail) = match &small {
        Ok(o) => {
            let iters = o.trace.iterates.len();
            let in_ball = o.trace.iterates.iter().all(|i| i.z_sup <= params.beta0);
            (
                iters <= PICARD_MAX && in_ball && o.terminal_deviation <= FLOOR_FACTOR * floor,
                format!(
                    "|y0-ybar| {z0_sup:.0e}: {iters} iterations, |y(T)-ybar| {:.3e} vs floor {floor:.3e}, ball kept {in_ball}",
                    o.terminal_deviation
                ),
            )
        }
        Err(e) => (false, format!("small run failed: {e}")),
    };
    let big_z0: Vec<f64> = s.z0.iter().map(|v| v * 10.0 * params.beta0 / z0_sup).collect();
    let big = fixed_point_control(&nl.spec, &s.grid, &s.family, &s.weights, &nl.ybar, &y0(&big_z0), &params);
    let big_ok = matches!(big, Err(NonlinearError::ClassMembershipLost { .. }));
    let big_detail = match &big {
        Err(e) => format!("10*beta0 run: {e}"),
        Ok(_) => "10*beta0 run converged".to_string(),
    };
    let elapsed = t0.elapsed();
    outcome(
        conv_ok && big_ok && elapsed < NONLINEAR_RUNTIME,
        format!("{conv_detail}; {big_detail}; {elapsed:.1?}"),
    )
}

/// Error of the forward scheme against `z_i = e^{-t}·(1 + i/2)·sin(πx)`
/// driven by the matching source, on the tree `k = [0, 0, 1]`.
fn manufactured_error(nx: usize, nt: usize, coupled: bool, horizon: f64) -> f64 {
    let grid = Grid::new(1.0, nx, horizon, nt).unwrap();
    let tree = CouplingTree::validate(&[0, 0, 1]).unwrap();
    let pi = std::f64::consts::PI;
    let a_val = if coupled { 0.7 } else { 0.0 };
    let c_val = if coupled { -0.3 } else { 0.0 };
    let a = (0..3)
        .map(|_| SpaceTimeField::from_fn(&grid, |m, j| a_val * (1.0 + 0.5 * grid.t(m)) * (pi * grid.x(j)).cos().powi(2)))
        .collect();
    let c = (0..4).map(|_| SpaceTimeField::constant(&grid, c_val)).collect();
    let coeffs = CoefficientSet::new(a, c, 1.0, 0.0).unwrap();
    let exact = |c: usize, t: f64, x: f64| -> f64 {
        let amp = 1.0 + 0.5 * c as f64;
        if coupled {
            (-t).exp() * amp * (pi * x).sin()
        } else {
            (1.0 + t) * amp * (pi * x).sin()
        }
    };
    let dt = |c: usize, t: f64, x: f64| -> f64 {
        let amp = 1.0 + 0.5 * c as f64;
        if coupled {
            -(-t).exp() * amp * (pi * x).sin()
        } else {
            amp * (pi * x).sin()
        }
    };
    let g = TrajectoryField::from_fn(&grid, 4, |m, c, j| {
        let (t, x) = (grid.t(m), grid.x(j));
        let mut v = dt(c, t, x) + pi * pi * exact(c, t, x) - coeffs.c(c).at(m, j) * exact(c, t, x);
        if c > 0 {
            v -= coeffs.a(c).at(m, j) * exact(tree.parent(c), t, x);
        }
        v
    });
    let sys = LinearSystem::new(&grid, &tree, &coeffs, NodeRange { first: 0, last: nx - 1 }).unwrap();
    let z0: Vec<f64> = (0..4 * nx).map(|k| exact(k / nx, 0.0, grid.x(k % nx))).collect();
    let traj = sys.solve_forward(&z0, None, Some(&g)).unwrap();
    let mut err: f64 = 0.0;
    for m in 0..=nt {
        for c in 0..4 {
            for j in 0..nx {
                err = err.max((traj.at(m, c, j) - exact(c, grid.t(m), grid.x(j))).abs());
            }
        }
    }
    err
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn criterion_10() -> Outcome {
    // time-linear data without coupling: implicit Euler is exact in time
    let hs: Vec<f64> = [19usize, 39, 79]
        .iter()
        .map(|&nx| manufactured_error(nx, 20, false, 0.5))
        .collect();
    let space = (hs[1] / hs[2]).log2();
    // fine space grid, coupled, time refinement
    let ts: Vec<f64> = [50usize, 100, 200]
        .iter()
        .map(|&nt| manufactured_error(399, nt, true, 0.5))
        .collect();
    let time = (ts[1] / ts[2]).log2();
    outcome(
        (space - 2.0).abs() <= ORDER_BAND && (time - 1.0).abs() <= ORDER_BAND,
        format!("spatial order {space:.3} (errors {}), temporal order {time:.3} (errors {})", sci(&hs), sci(&ts)),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Kalman ranks", criterion_1),
        ("discrete duality", criterion_2),
        ("Gramian symmetry and PSD", criterion_3),
        ("eps decay and uniform weighted norm", criterion_4),
        ("negative control on the Kalman-deficient star", criterion_5),
        ("weighted energy constant stability", criterion_6),
        ("weight certificates", criterion_7),
        ("sigma sequence", criterion_8),
        ("nonlinear local controllability", criterion_9),
        ("solver convergence orders", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1?}]",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t0.elapsed()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
