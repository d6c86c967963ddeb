//! Ratio of the weighted sup norm of adjoint samples to their observed energy.

use nullctl::carleman::linf_l2_check;
use nullctl::hum::Gramian;
use nullctl::pde::LinearSystem;
use nullctl::scenario::LoadedScenario;

fn main() {
    let s = LoadedScenario::preset("star2", &[]).unwrap().scenario.build().unwrap();
    let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap();
    let gram = Gramian::new(sys, &s.weights);
    for delta1 in [0.5 * s.delta1, s.delta1, 2.0 * s.delta1] {
        let r = linf_l2_check(&gram, delta1, 8, 20, 42).unwrap();
        println!("delta1 {delta1:.3e}: max ratio {:.4e}", r.max_ratio.unwrap());
    }
}
