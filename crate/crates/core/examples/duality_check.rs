//! Discrete duality between the forward scheme and its adjoint on random data.

use nullctl::carleman::random_sine_field;
use nullctl::pde::{ControlField, LinearSystem};
use nullctl::scenario::LoadedScenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    for name in ["star2", "tree4"] {
        let s = LoadedScenario::preset(name, &[]).unwrap().scenario.build().unwrap();
        let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let z0 = random_sine_field(&s.grid, sys.n_comp(), &mut rng);
            let pt = random_sine_field(&s.grid, sys.n_comp(), &mut rng);
            let u = ControlField::from_fn(&s.grid, sys.omega0, |_, _| rng.random_range(-1.0..1.0));
            worst = worst.max(sys.duality_residual(&z0, &u, &pt).unwrap());
        }
        println!("{name}: max duality residual over 20 triples {worst:.3e}");
    }
}
