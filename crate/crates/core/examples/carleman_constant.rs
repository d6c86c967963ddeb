//! Empirical weighted-energy constant on star2 and its behaviour under refinement.

use nullctl::carleman::{empirical_constant, CoefficientSource};
use nullctl::scenario::LoadedScenario;

fn estimate(overrides: &[&str]) -> f64 {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let loaded = LoadedScenario::preset("star2", &o).unwrap();
    let s = loaded.scenario.build().unwrap();
    let est = empirical_constant(
        &s.grid,
        &s.tree,
        s.family.omega0.nodes,
        CoefficientSource::Fixed(&s.coeffs),
        &s.weights,
        loaded.scenario.run.n_samples,
        loaded.scenario.run.seed,
    )
    .unwrap();
    let worst = est.worst.as_ref().unwrap();
    println!(
        "Nx = {:3}: C_est = {:.16e} (worst sample {}, lhs {:.3e})",
        s.grid.nx,
        est.c_est.unwrap(),
        worst.sample_id,
        worst.lhs
    );
    est.c_est.unwrap()
}

fn main() {
    let base = estimate(&[]);
    let fine = estimate(&["grid.Nx=199", "grid.Nt=400"]);
    println!("relative drift {:.3}%", 100.0 * (fine - base).abs() / base);
}
