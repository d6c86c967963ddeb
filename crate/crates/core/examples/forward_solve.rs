//! Free evolution of the star2 preset and the decay of each component.

use nullctl::pde::LinearSystem;
use nullctl::scenario::LoadedScenario;

fn main() {
    let loaded = LoadedScenario::preset("star2", &[]).expect("preset");
    let s = loaded.scenario.build().expect("setup");
    let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).expect("system");
    let traj = sys.solve_forward(&s.z0, None, None).expect("forward solve");
    let g = &s.grid;
    for m in (0..=g.nt).step_by(g.nt / 8) {
        let norms: Vec<String> = (0..sys.n_comp())
            .map(|c| format!("{:.4e}", g.norm(traj.comp(m, c))))
            .collect();
        println!("t = {:5.2}  |z_c| = [{}]", g.t(m), norms.join(", "));
    }
}
