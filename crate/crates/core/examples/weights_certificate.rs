//! Weight constants, certificate margins and order thresholds for each preset.

use nullctl::scenario::{LoadedScenario, PRESETS};
use nullctl::weights::check_weight_order;

fn main() {
    for (name, _) in PRESETS {
        let loaded = LoadedScenario::preset(name, &[]).unwrap();
        let s = loaded.scenario.build().unwrap();
        let w = &s.weights;
        let k: Vec<String> = w.psis.iter().map(|p| format!("{}={:.2}", p.label, p.k)).collect();
        println!("{name}: lambda {:.4}, s {:.4e}, {}", w.lambda, w.s, k.join(" "));
        for c in &w.certificate.checks {
            println!("  {:<28} {:?} margin {:?}", c.relation, c.index, c.margin);
        }
        let order = check_weight_order(w, &s.grid, 8, &[w.lambda], &loaded.scenario.s_grid());
        for t in &order.thresholds {
            println!("  order {:<22} s* {:?}", t.relation, t.s_threshold);
        }
    }
}
