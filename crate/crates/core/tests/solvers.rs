use std::f64::consts::PI;

use nullctl::carleman::{
    empirical_constant_from, lhs_energy, linf_lhs, observability_constant, random_sine_field, rhs_terms,
    CarlemanError, SampleData,
};
use nullctl::coupling::{CoefficientSet, CouplingTree};
use nullctl::geometry::{Grid, NodeRange};
use nullctl::hum::{control_norms, solve_penalized, Gramian};
use nullctl::nonlinear::{fixed_point_control, linearize_coeffs, FixedPointParams};
use nullctl::pde::{thomas_const_off, ControlField, LinearSystem, TrajectoryField};
use nullctl::scenario::{LoadedScenario, Setup};
use nullctl::weights::exp_weight;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(name: &str, overrides: &[&str]) -> (LoadedScenario, Setup) {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let loaded = LoadedScenario::preset(name, &o).unwrap();
    let s = loaded.scenario.build().unwrap();
    (loaded, s)
}

fn system(s: &Setup) -> LinearSystem<'_> {
    LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap()
}

fn sine(grid: &Grid, k: f64) -> Vec<f64> {
    (0..grid.nx).map(|j| (k * PI * grid.x(j) / grid.length).sin()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn zero_initial_state_needs_no_control() {
    let (_, s) = setup("star2", &[]);
    let gram = Gramian::new(system(&s), &s.weights);
    let r = solve_penalized(&gram, &vec![0.0; s.z0.len()], 1e-6).unwrap();
    assert_eq!(r.cg_iters, 0);
    assert_eq!(r.linf, 0.0);
    assert_eq!(r.terminal_norm, 0.0);
}

#[test]
fn dual_energy_decreases_and_optimality_holds() {
    let (_, s) = setup("star2", &[]);
    let gram = Gramian::new(system(&s), &s.weights);
    let r = solve_penalized(&gram, &s.z0, 1e-4).unwrap();
    assert!(r.cg_iters > 0);
    let scale = r.energy_trace.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    for w in r.energy_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * scale, "{} -> {}", w[0], w[1]);
    }
    assert!(r.consistency <= 1e-6);
    assert!(r.terminal_norm < s.grid.norm(&s.z0));
}

#[test]
fn control_norm_examples() {
    let (_, s) = setup("star2", &[]);
    let (g, w) = (&s.grid, &s.weights);
    let nodes = s.family.omega0.nodes;
    let zero = ControlField::zeros(g, nodes);
    assert_eq!(control_norms(g, w, &zero, &zero), (0.0, 0.0));

    let ones = ControlField::from_fn(g, nodes, |_, _| 1.0);
    let direct: f64 = (0..g.nt)
        .map(|m| {
            let v = (2.0 * w.s * w.alpha_bar(g.t(m))).exp();
            if v.is_finite() { v } else { 0.0 }
        })
        .sum::<f64>()
        * g.tau
        * g.h
        * nodes.len() as f64;
    let (weighted, linf) = control_norms(g, w, &ones, &ones);
    assert!(rel(weighted, direct.sqrt()) < 1e-10, "{weighted} vs {}", direct.sqrt());
    assert_eq!(linf, 1.0);

    let twos = ControlField::from_fn(g, nodes, |_, _| 2.0);
    let (w2, l2) = control_norms(g, w, &twos, &twos);
    assert!(rel(w2, 2.0 * weighted) < 1e-14);
    assert_eq!(l2, 2.0);
}

#[test]
fn rhs_terms_match_direct_sums() {
    let (_, s) = setup("star2", &[]);
    let (g, w) = (&s.grid, &s.weights);
    let nodes = s.family.omega0.nodes;
    let n_comp = s.tree.n() + 1;
    let zero = TrajectoryField::zeros(g, n_comp);
    assert_eq!(rhs_terms(g, &zero, nodes, Some(&zero), w), (0.0, 0.0));

    let p = TrajectoryField::from_fn(g, n_comp, |_, c, _| if c == 0 { 1.0 } else { 0.0 });
    let weight = |m: usize| exp_weight(w.log_bar(2.0, g.t(m)));
    let expect: f64 = (1..g.nt).map(weight).sum::<f64>() * g.tau * g.h * nodes.len() as f64;
    let (m_star, j_star) = (g.nt / 2, 17);
    let src = TrajectoryField::from_fn(g, n_comp, |m, c, j| if (m, c, j) == (m_star, 1, j_star) { 3.0 } else { 0.0 });
    let (obs, s_src) = rhs_terms(g, &p, nodes, Some(&src), w);
    assert!(rel(obs, expect) < 1e-12);
    assert!(rel(s_src, g.tau * g.h * 9.0 * weight(m_star)) < 1e-14);
}

#[test]
fn lhs_of_a_steady_mode_matches_closed_forms() {
    let (_, s) = setup("star2", &["grid.Nx=399"]);
    let (g, w) = (&s.grid, &s.weights);
    let n_comp = s.tree.n() + 1;
    let mode = sine(g, 1.0);
    let p = TrajectoryField::from_fn(g, n_comp, |_, c, j| if c == 0 { mode[j] } else { 0.0 });
    let t = lhs_energy(g, &p, w);
    let time_sum: f64 = (1..g.nt).map(|m| exp_weight(w.log_under(2.0, g.t(m)))).sum::<f64>() * g.tau;
    let k = PI / g.length;
    let half = g.length / 2.0;
    assert_eq!(t.dt, 0.0);
    assert!(rel(t.p, half * time_sum) < 1e-3);
    // interior sum of cos² misses the endpoint values: L/2 - h
    assert!(rel(t.dx, k * k * (half - g.h) * time_sum) < 1e-3);
    assert!(rel(t.dxx, k.powi(4) * half * time_sum) < 1e-3);

    let zero = TrajectoryField::zeros(g, n_comp);
    assert_eq!(lhs_energy(g, &zero, w).total, 0.0);
    let doubled = w.with_s(2.0 * w.s);
    assert!(lhs_energy(g, &p, &doubled).total < t.total);
}

#[test]
fn zero_sample_is_skipped() {
    let (_, s) = setup("star2", &[]);
    let n_comp = s.tree.n() + 1;
    let data = [SampleData {
        p_terminal: vec![0.0; n_comp * s.grid.nx],
        source: None,
    }];
    let est = empirical_constant_from(&s.grid, &s.tree, s.family.omega0.nodes, &s.coeffs, &s.weights, &data).unwrap();
    assert_eq!(est.c_est, None);
    assert_eq!(est.samples[0].ratio, None);
}

#[test]
fn shrinking_the_control_region_raises_the_observability_constant() {
    let (_, s) = setup("star2", &[]);
    let full = s.family.omega0.nodes;
    let small = NodeRange {
        first: full.first + 20,
        last: full.last - 20,
    };
    let start = random_sine_field(&s.grid, s.tree.n() + 1, &mut ChaCha8Rng::seed_from_u64(9));
    let mut constants = Vec::new();
    for nodes in [full, small] {
        let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, nodes).unwrap();
        let gram = Gramian::new(sys, &s.weights);
        constants.push(observability_constant(&gram, &start, 1e-8, 200).unwrap().constant);
    }
    assert!(constants[0].is_finite() && constants[1] > constants[0], "{constants:?}");
}

#[test]
fn observability_stalls_without_the_kalman_condition() {
    let (_, s) = setup("kalman-neg", &[]);
    let gram = Gramian::new(system(&s), &s.weights);
    let r = observability_constant(&gram, &s.z0, 1e-8, 200);
    assert!(matches!(r, Err(CarlemanError::PowerIterationStalled { .. })), "{r:?}");
}

#[test]
fn larger_delta1_lowers_the_linf_side() {
    let (_, s) = setup("star2", &[]);
    let sys = system(&s);
    let p = sys.solve_adjoint(&s.z0, None).unwrap();
    let a = linf_lhs(&s.grid, &p, &s.weights, s.delta1, 8);
    let b = linf_lhs(&s.grid, &p, &s.weights, 2.0 * s.delta1, 8);
    assert!(a > 0.0 && b < a);
}

#[test]
fn cascade_matches_duhamel() {
    // z0' = z0'' , z1' = z1'' + z0 with z0(0) = sin(πx), z1(0) = 0
    let grid = Grid::new(1.0, 199, 0.1, 2000).unwrap();
    let tree = CouplingTree::validate(&[0]).unwrap();
    let coeffs = CoefficientSet::constant(&grid, &[1.0], &[0.0, 0.0]).unwrap();
    let sys = LinearSystem::new(&grid, &tree, &coeffs, NodeRange { first: 0, last: 10 }).unwrap();
    let nx = grid.nx;
    let mut z0 = sine(&grid, 1.0);
    z0.extend(vec![0.0; nx]);
    let zt = sys.solve_forward_terminal(&z0, None, None).unwrap();
    let t = grid.horizon;
    let decay = (-PI * PI * t).exp();
    let mode = sine(&grid, 1.0);
    let err0 = (0..nx).fold(0.0f64, |a, j| a.max((zt[j] - decay * mode[j]).abs()));
    let err1 = (0..nx).fold(0.0f64, |a, j| a.max((zt[nx + j] - t * decay * mode[j]).abs()));
    assert!(err0 < 1e-3 * decay, "{err0}");
    assert!(err1 < 1e-2 * t * decay, "{err1}");
}

#[test]
fn scalar_adjoint_is_forward_reversed() {
    let grid = Grid::new(1.0, 49, 0.2, 40).unwrap();
    let tree = CouplingTree::validate(&[]).unwrap();
    let coeffs = CoefficientSet::zeros(&grid, 0);
    let sys = LinearSystem::new(&grid, &tree, &coeffs, NodeRange { first: 0, last: 48 }).unwrap();
    let mode = sine(&grid, 3.0);
    let p = sys.solve_adjoint(&mode, None).unwrap();
    let z = sys.solve_forward(&mode, None, None).unwrap();
    for m in 0..=grid.nt {
        let (a, b) = (p.comp(m, 0), z.comp(grid.nt - m, 0));
        let diff = a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        assert!(diff < 1e-13, "level {m}: {diff}");
    }
}

/// `z^{m+1} = M^{-1} z^m + τ a z^m_parent`: coupling read from the old level
/// instead of the diffused one, so the adjoint is no longer its transpose.
fn mismatched_forward(grid: &Grid, a: f64, z0: &[f64]) -> Vec<f64> {
    let nx = grid.nx;
    let r = grid.tau / (grid.h * grid.h);
    let diag = vec![1.0 + 2.0 * r; nx];
    let mut z = z0.to_vec();
    let mut scratch = vec![0.0; nx];
    for _ in 0..grid.nt {
        let mut next = vec![0.0; 2 * nx];
        thomas_const_off(-r, &diag, &z[..nx], &mut next[..nx], &mut scratch);
        thomas_const_off(-r, &diag, &z[nx..], &mut next[nx..], &mut scratch);
        for j in 0..nx {
            next[nx + j] += grid.tau * a * z[j];
        }
        z = next;
    }
    z
}

#[test]
fn mismatched_scheme_breaks_duality_at_order_tau() {
    let residual = |nt: usize| -> (f64, f64) {
        let grid = Grid::new(1.0, 49, 0.5, nt).unwrap();
        let tree = CouplingTree::validate(&[0]).unwrap();
        let coeffs = CoefficientSet::constant(&grid, &[2.0], &[0.0, 0.0]).unwrap();
        let sys = LinearSystem::new(&grid, &tree, &coeffs, NodeRange { first: 0, last: 48 }).unwrap();
        let mut z0 = sine(&grid, 1.0);
        z0.extend(sine(&grid, 2.0));
        let mut pt = sine(&grid, 1.0);
        pt.extend(sine(&grid, 1.0));
        let p0 = sys.solve_adjoint(&pt, None).unwrap();
        let pair = |zt: &[f64]| (grid.inner(zt, &pt) - grid.inner(&z0, p0.initial())).abs();
        let good = pair(&sys.solve_forward_terminal(&z0, None, None).unwrap());
        let bad = pair(&mismatched_forward(&grid, 2.0, &z0));
        (good, bad)
    };
    let (good, coarse) = residual(50);
    let (_, fine) = residual(100);
    assert!(good < 1e-14, "{good}");
    assert!(coarse > 1e-4, "{coarse}");
    let ratio = coarse / fine;
    assert!((1.6..2.4).contains(&ratio), "{coarse} / {fine}");
}

fn fixed_point_params(s: &LoadedScenario) -> FixedPointParams {
    let run = &s.scenario.run;
    FixedPointParams {
        beta0: run.beta0,
        eps: run.eps,
        tol: run.tol,
        max_iters: run.max_iters,
    }
}

#[test]
fn linear_nonlinearity_reaches_the_hum_control_in_one_step() {
    let (loaded, s) = setup(
        "nonlinear-star2",
        &[
            r#"nonlinear.xi.0={"name":"zero"}"#,
            r#"nonlinear.xi.1={"name":"linear","a":1,"b":0}"#,
            r#"nonlinear.xi.2={"name":"linear","a":1,"b":0}"#,
        ],
    );
    assert!(s.validate(&loaded.scenario).passed());
    let nl = s.nonlinear.as_ref().unwrap();
    let nx = s.grid.nx;
    let y0: Vec<f64> = s.z0.iter().enumerate().map(|(k, z)| nl.ybar[k / nx][k % nx] + z).collect();
    let params = fixed_point_params(&loaded);
    let out = fixed_point_control(&nl.spec, &s.grid, &s.family, &s.weights, &nl.ybar, &y0, &params).unwrap();
    // the second iterate only confirms the first
    assert_eq!(out.trace.iterates.len(), 2);
    assert_eq!(out.trace.iterates[1].diff_norm, 0.0);

    let zero = TrajectoryField::zeros(&s.grid, s.tree.n() + 1);
    let lin = linearize_coeffs(&nl.spec, &s.grid, &nl.ybar, &zero, 1.0, 0.5).unwrap();
    let sys = LinearSystem::new(&s.grid, &s.tree, &lin, s.family.omega0.nodes).unwrap();
    let hum = solve_penalized(&Gramian::new(sys, &s.weights), &s.z0, params.eps).unwrap();
    assert!(rel(out.terminal_deviation, hum.terminal_norm) < 1e-10);
    assert_eq!(out.control.u.sub(&hum.u).linf(), 0.0);
}

#[test]
fn nonlinear_hypothesis_failures_are_reported() {
    let cases = [
        (r#"nonlinear.xi.1={"name":"linear","a":0,"b":1}"#, "coupling_derivative_on_under"),
        (r#"nonlinear.zeta.1={"kind":"constant","value":1}"#, "f_support_in_omega"),
    ];
    for (o, relation) in cases {
        let (loaded, s) = setup("nonlinear-star2", &[o]);
        let report = s.validate(&loaded.scenario);
        let check = report.find(relation, Some(1)).unwrap();
        assert!(!check.passed, "{o}");
    }
}

#[test]
fn tree_hypothesis_failures_are_reported() {
    let chain = ["omega.2=[0.6,1.8]", "omega_under.3=[0.7,1.68]"];
    let (loaded, s) = setup("tree4", &chain);
    let report = s.validate(&loaded.scenario);
    assert!(!report.find("under_in_parent_under", Some(3)).unwrap().passed);

    let siblings = ["omega.3=[0.72,1.8]", "omega_under.4=[1.02,1.68]", "omega_tilde.4=[1.2,1.5]"];
    let (loaded, s) = setup("tree4", &siblings);
    let report = s.validate(&loaded.scenario);
    for i in [3, 4] {
        assert!(!report.find("sibling_exclusion_nonempty", Some(i)).unwrap().passed);
    }
}
