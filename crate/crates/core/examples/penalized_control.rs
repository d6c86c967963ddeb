//! One penalized control on star2 and what it does to the terminal state.

use nullctl::hum::{solve_penalized, Gramian};
use nullctl::pde::LinearSystem;
use nullctl::scenario::LoadedScenario;

fn main() {
    let s = LoadedScenario::preset("star2", &[]).unwrap().scenario.build().unwrap();
    let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap();
    let gram = Gramian::new(sys, &s.weights);
    let free = sys.solve_forward_terminal(&s.z0, None, None).unwrap();
    let r = solve_penalized(&gram, &s.z0, 1e-6).unwrap();
    println!("|z(T)| without control  {:.4e}", s.grid.norm(&free));
    println!("|z(T)| with control     {:.4e}", r.terminal_norm);
    println!("|u e^(-s abar)|         {:.4e}", r.weighted_l2);
    println!("|u|_inf                 {:.4e}", r.linf);
    println!("CG iterations           {}", r.cg_iters);
    println!("optimality defect       {:.2e}", r.consistency);
}
