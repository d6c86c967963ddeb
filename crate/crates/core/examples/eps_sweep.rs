//! Penalty sweep: terminal norm against eps, with the fitted log-log slope.
//! Pass a preset name (default star2).

use nullctl::hum::{eps_sweep, Gramian};
use nullctl::pde::LinearSystem;
use nullctl::scenario::LoadedScenario;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "star2".into());
    let loaded = LoadedScenario::preset(&name, &[]).unwrap();
    let s = loaded.scenario.build().unwrap();
    let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap();
    let gram = Gramian::new(sys, &s.weights);
    let (sweep, _) = eps_sweep(&gram, &s.z0, &loaded.scenario.run.eps_list).unwrap();
    println!("{:>8} {:>12} {:>12} {:>5}", "eps", "|z(T)|", "weighted", "cg");
    for r in &sweep.rows {
        println!("{:8.0e} {:12.4e} {:12.4e} {:5}", r.eps, r.terminal_norm, r.weighted_l2, r.cg_iters);
    }
    println!("slope {:?} over {} rows, weighted spread {:.3}", sweep.slope, sweep.pre_floor, sweep.weighted_l2_spread);
    sweep.write_csv(std::io::stdout()).unwrap();
}
