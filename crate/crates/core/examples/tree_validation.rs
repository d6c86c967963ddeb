//! Geometric hypotheses of the tree preset, then the same preset with two
//! siblings sharing a control region.

use nullctl::scenario::LoadedScenario;

fn report(overrides: &[&str]) {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let loaded = LoadedScenario::preset("tree4", &o).unwrap();
    let s = loaded.scenario.build().unwrap();
    let r = s.validate(&loaded.scenario);
    println!("overrides {overrides:?}: {} checks, passed {}", r.checks.len(), r.passed());
    for c in r.failures() {
        println!("  FAIL {}[{:?}] {}", c.relation, c.index, c.detail);
    }
}

fn main() {
    report(&[]);
    report(&["omega.3=[0.72,1.8]", "omega_under.4=[1.02,1.68]", "omega_tilde.4=[1.2,1.5]"]);
}
