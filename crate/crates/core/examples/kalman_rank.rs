//! Kalman rank of the two constant-coefficient counterexamples.

use nullctl::coupling::{kalman_matrix, kalman_rank, unobservable_directions};
use nullctl::scenario::LoadedScenario;

fn main() {
    for name in ["kalman-neg", "kalman-neg-tree"] {
        let loaded = LoadedScenario::preset(name, &[]).expect("preset");
        let (a0, b) = loaded.scenario.kalman_pair().expect("kalman pair");
        let k = kalman_matrix(&a0, &b);
        println!("{name}: rank {} of {}", kalman_rank(&k, 1e-10), k.nrows());
        for v in unobservable_directions(&a0, &b, 1e-10) {
            println!("  unobservable direction {:?}", v.as_slice());
        }
    }
}
