//! Picard iteration for the semilinear star: a small initial deviation is
//! steered to the stationary state, a large one leaves the admissible ball.

use nullctl::nonlinear::{fixed_point_control, FixedPointParams};
use nullctl::scenario::LoadedScenario;

fn main() {
    let loaded = LoadedScenario::preset("nonlinear-star2", &[]).unwrap();
    let s = loaded.scenario.build().unwrap();
    let nl = s.nonlinear.as_ref().unwrap();
    let run = &loaded.scenario.run;
    let params = FixedPointParams {
        beta0: run.beta0,
        eps: run.eps,
        tol: run.tol,
        max_iters: run.max_iters,
    };
    let nx = s.grid.nx;
    for scale in [1.0, 1000.0] {
        let y0: Vec<f64> = s.z0.iter().enumerate().map(|(k, z)| nl.ybar[k / nx][k % nx] + scale * z).collect();
        match fixed_point_control(&nl.spec, &s.grid, &s.family, &s.weights, &nl.ybar, &y0, &params) {
            Ok(out) => {
                for it in &out.trace.iterates {
                    println!("iter {} diff {:.3e} |z(T)| {:.3e} |z|_inf {:.3e}", it.iter, it.diff_norm, it.terminal_norm, it.z_sup);
                }
                println!("scale {scale}: |y(T) - ybar| = {:.4e}", out.terminal_deviation);
            }
            Err(e) => println!("scale {scale}: {e}"),
        }
    }
}
