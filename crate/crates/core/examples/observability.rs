//! Observability constant by inverse power iteration, and its failure on a
//! system without the Kalman condition.

use nullctl::carleman::{observability_constant, random_sine_field, OBS_MAX_ITERS};
use nullctl::hum::Gramian;
use nullctl::pde::LinearSystem;
use nullctl::scenario::LoadedScenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    for name in ["star2", "tree4", "kalman-neg"] {
        let s = LoadedScenario::preset(name, &[]).unwrap().scenario.build().unwrap();
        let sys = LinearSystem::new(&s.grid, &s.tree, &s.coeffs, s.family.omega0.nodes).unwrap();
        let gram = Gramian::new(sys, &s.weights);
        // a generic start; symmetric data would stay in a symmetric subspace
        let start = random_sine_field(&s.grid, sys.n_comp(), &mut ChaCha8Rng::seed_from_u64(42));
        match observability_constant(&gram, &start, 1e-8, OBS_MAX_ITERS) {
            Ok(r) => println!(
                "{name}: C_obs = {:.6e} after {} iterations on a {}-dimensional subspace",
                r.constant, r.iterations, r.subspace_dim
            ),
            Err(e) => println!("{name}: {e}"),
        }
    }
}
