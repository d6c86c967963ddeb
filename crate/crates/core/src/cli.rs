//! Command-line orchestration: scenario loading, one runner per subcommand,
//! CSV/JSON artifacts and exit codes (0 success, 1 validation failure,
//! 2 solver error).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::carleman::{
    empirical_constant, linf_l2_check, observability_constant, random_sine_field, CoefficientSource, OBS_MAX_ITERS,
};
use crate::coupling::{kalman_matrix, kalman_rank, unobservable_directions};
use crate::hum::{eps_sweep, solve_penalized, Gramian};
use crate::nonlinear::{fixed_point_control, FixedPointParams, FixedPointTrace, NonlinearError};
use crate::pde::{ControlField, LinearSystem};
use crate::scenario::{LoadedScenario, ScenarioError, Setup};
use crate::validation::ValidationReport;
use crate::weights::{check_weight_order, sigma_sequence};

/// Relative tolerance for the Kalman rank.
pub const KALMAN_TOL: f64 = 1e-10;
/// Relative change of the Rayleigh quotient that ends the power iteration.
pub const OBS_TOL: f64 = 1e-8;
/// Spatial dimension of the solvers.
pub const SPACE_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    Validate,
    Weights,
    SolveForward,
    ControlLinear,
    SweepEps,
    CarlemanCheck,
    Observability,
    LinfCheck,
    Kalman,
    ControlNonlinear,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Weights => "weights",
            Subcommand::SolveForward => "solve-forward",
            Subcommand::ControlLinear => "control-linear",
            Subcommand::SweepEps => "sweep-eps",
            Subcommand::CarlemanCheck => "carleman-check",
            Subcommand::Observability => "observability",
            Subcommand::LinfCheck => "linf-check",
            Subcommand::Kalman => "kalman",
            Subcommand::ControlNonlinear => "control-nonlinear",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nullctl", version, about = "Null controllability of coupled parabolic systems")]
pub struct Cli {
    pub command: Subcommand,
    /// Built-in preset (star2, tree4, kalman-neg, kalman-neg-tree, nonlinear-star2).
    pub preset: Option<String>,
    /// Scenario JSON file, used instead of a preset.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Dotted-path scenario override, e.g. `grid.Nx=199`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed")]
    Validation(Box<ValidationReport>),
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Scenario(_) => 1,
            _ => 2,
        }
    }
}

/// Files written by one run.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    /// Main JSON report, also written to disk.
    pub report: Value,
}

pub struct Runner<'a> {
    pub loaded: &'a LoadedScenario,
    pub out_dir: &'a Path,
    pub seed: u64,
    files: Vec<PathBuf>,
}

fn solver<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

impl<'a> Runner<'a> {
    pub fn new(loaded: &'a LoadedScenario, out_dir: &'a Path, seed: Option<u64>) -> Self {
        Self {
            loaded,
            out_dir,
            seed: seed.unwrap_or(loaded.scenario.run.seed),
            files: Vec::new(),
        }
    }

    fn meta(&self, cmd: Subcommand) -> Value {
        json!({
            "subcommand": cmd.name(),
            "scenario": self.loaded.scenario.name,
            "scenario_hash": self.loaded.hash,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn path(&mut self, name: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(self.out_dir)?;
        let p = self.out_dir.join(name);
        self.files.push(p.clone());
        Ok(p)
    }

    fn writer(&mut self, name: &str) -> std::io::Result<BufWriter<File>> {
        let p = self.path(name)?;
        Ok(BufWriter::new(File::create(p)?))
    }

    fn write_json(&mut self, name: &str, cmd: Subcommand, body: Value) -> Result<Value, CliError> {
        let mut report = json!({ "meta": self.meta(cmd) });
        if let (Value::Object(dst), Value::Object(src)) = (&mut report, body) {
            dst.extend(src);
        }
        let mut w = self.writer(name)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
        Ok(report)
    }

    /// Builds and validates; on failure writes `validation.json`.
    fn setup(&mut self, cmd: Subcommand) -> Result<Setup, CliError> {
        let scenario = &self.loaded.scenario;
        let setup = match scenario.build() {
            Ok(s) => s,
            Err(e) => {
                self.write_json(
                    "validation.json",
                    cmd,
                    json!({ "passed": false, "error": e.to_string(), "checks": [] }),
                )?;
                return Err(e.into());
            }
        };
        let report = setup.validate(scenario);
        if !report.passed() {
            self.write_json(
                "validation.json",
                cmd,
                json!({ "passed": false, "checks": report.checks }),
            )?;
            return Err(CliError::Validation(Box::new(report)));
        }
        Ok(setup)
    }

    pub fn run(mut self, cmd: Subcommand) -> Result<Artifacts, CliError> {
        let report = match cmd {
            Subcommand::Validate => self.validate(cmd)?,
            Subcommand::Kalman => self.kalman(cmd)?,
            _ => {
                let setup = self.setup(cmd)?;
                match cmd {
                    Subcommand::Weights => self.weights(cmd, &setup)?,
                    Subcommand::SolveForward => self.solve_forward(cmd, &setup)?,
                    Subcommand::ControlLinear => self.control_linear(cmd, &setup)?,
                    Subcommand::SweepEps => self.sweep(cmd, &setup)?,
                    Subcommand::CarlemanCheck => self.carleman(cmd, &setup)?,
                    Subcommand::Observability => self.observability(cmd, &setup)?,
                    Subcommand::LinfCheck => self.linf(cmd, &setup)?,
                    Subcommand::ControlNonlinear => self.control_nonlinear(cmd, &setup)?,
                    Subcommand::Validate | Subcommand::Kalman => unreachable!(),
                }
            }
        };
        Ok(Artifacts {
            files: self.files,
            report,
        })
    }

    fn validate(&mut self, cmd: Subcommand) -> Result<Value, CliError> {
        let setup = self.setup(cmd)?;
        let report = setup.validate(&self.loaded.scenario);
        let depths: Vec<usize> = (1..=setup.tree.n()).map(|i| setup.tree.depth(i)).collect();
        self.write_json(
            "validation.json",
            cmd,
            json!({
                "passed": report.passed(),
                "tree_depths": depths,
                "checks": report.checks,
            }),
        )
    }

    fn weights(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let scn = &self.loaded.scenario;
        let w = &setup.weights;
        let lambdas = scn.run.lambda_grid.clone().unwrap_or_else(|| vec![w.lambda]);
        let order = check_weight_order(w, &setup.grid, scn.run.order_m0, &lambdas, &scn.s_grid());
        let constants: Vec<Value> = w
            .psis
            .iter()
            .map(|p| {
                json!({
                    "label": p.label, "component": p.component, "kind": p.kind,
                    "k": p.k, "inf": p.inf(), "sup": p.sup(),
                })
            })
            .collect();
        let finite = order.all_finite();
        let report = self.write_json(
            "weights.json",
            cmd,
            json!({
                "passed": w.certificate_passed() && finite,
                "lambda": w.lambda,
                "s": w.s,
                "kappa": scn.weights.kappa,
                "eps_sep": w.eps_sep,
                "psi_bar": w.psi_bar,
                "psi_under": w.psi_under,
                "shift": w.shift,
                "delta1": setup.delta1,
                "constants": constants,
                "certificate": w.certificate.checks,
                "order": order,
                "sigma": sigma_sequence(SPACE_DIM),
            }),
        )?;
        if !finite {
            return Err(CliError::Validation(Box::default()));
        }
        Ok(report)
    }

    fn system<'s>(setup: &'s Setup) -> Result<LinearSystem<'s>, CliError> {
        LinearSystem::new(&setup.grid, &setup.tree, &setup.coeffs, setup.family.omega0.nodes).map_err(solver)
    }

    fn solve_forward(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let sys = Self::system(setup)?;
        let traj = sys.solve_forward(&setup.z0, None, None).map_err(solver)?;
        traj.write_csv(&setup.grid, self.writer("trajectory.csv")?)?;
        let g = &setup.grid;
        self.write_json(
            "forward.json",
            cmd,
            json!({
                "initial_norm": g.norm(traj.initial()),
                "terminal_norm": g.norm(traj.terminal()),
                "sup_norm": traj.sup_norm(),
            }),
        )
    }

    fn control_linear(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let sys = Self::system(setup)?;
        let gram = Gramian::new(sys, &setup.weights);
        let eps = self.loaded.scenario.run.eps;
        let res = solve_penalized(&gram, &setup.z0, eps).map_err(solver)?;
        write_control_csv(&setup.grid, &res.u, self.writer("control.csv")?)?;
        let traj = sys.solve_forward(&setup.z0, Some(&res.u), None).map_err(solver)?;
        traj.write_csv(&setup.grid, self.writer("trajectory.csv")?)?;
        self.write_json(
            "control.json",
            cmd,
            json!({ "z0_norm": setup.grid.norm(&setup.z0), "result": res }),
        )
    }

    fn sweep(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let sys = Self::system(setup)?;
        let gram = Gramian::new(sys, &setup.weights);
        let (sweep, _) = eps_sweep(&gram, &setup.z0, &self.loaded.scenario.run.eps_list).map_err(solver)?;
        sweep.write_csv(self.writer("sweep.csv")?)?;
        self.write_json(
            "sweep.json",
            cmd,
            json!({
                "z0_norm": setup.grid.norm(&setup.z0),
                "slope": sweep.slope,
                "pre_floor_rows": sweep.pre_floor,
                "weighted_l2_spread": sweep.weighted_l2_spread,
                "cauchy": sweep.cauchy,
                "rows": sweep.rows,
            }),
        )
    }

    fn carleman(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let n = self.loaded.scenario.run.n_samples;
        let est = empirical_constant(
            &setup.grid,
            &setup.tree,
            setup.family.omega0.nodes,
            CoefficientSource::Fixed(&setup.coeffs),
            &setup.weights,
            n,
            self.seed,
        )
        .map_err(solver)?;
        est.write_csv(self.writer("carleman.csv")?)?;
        self.write_json(
            "carleman.json",
            cmd,
            json!({
                "C_est": est.c_est,
                "s": est.s,
                "lambda": est.lambda,
                "n_samples": n,
                "base_seed": est.base_seed,
                "worst": est.worst,
            }),
        )
    }

    fn observability(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        use rand::SeedableRng;
        let sys = Self::system(setup)?;
        let gram = Gramian::new(sys, &setup.weights);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let start = random_sine_field(&setup.grid, sys.n_comp(), &mut rng);
        match observability_constant(&gram, &start, OBS_TOL, OBS_MAX_ITERS) {
            Ok(r) => self.write_json(
                "observability.json",
                cmd,
                json!({ "status": "converged", "constant": r.constant, "iterations": r.iterations, "quotients": r.quotients }),
            ),
            Err(e) => {
                self.write_json(
                    "observability.json",
                    cmd,
                    json!({ "status": "failed", "error": e.to_string() }),
                )?;
                Err(solver(e))
            }
        }
    }

    fn linf(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let sys = Self::system(setup)?;
        let gram = Gramian::new(sys, &setup.weights);
        let sigma = sigma_sequence(SPACE_DIM);
        let n = self.loaded.scenario.run.n_samples;
        let r = linf_l2_check(&gram, setup.delta1, sigma.m0, n, self.seed).map_err(solver)?;
        let mut w = csv::Writer::from_writer(self.writer("linf.csv")?);
        w.write_record(["sample_id", "lhs", "rhs", "ratio"])?;
        for s in &r.samples {
            w.write_record([
                s.sample_id.to_string(),
                format!("{:.16e}", s.lhs),
                format!("{:.16e}", s.rhs),
                s.ratio.map_or(String::new(), |v| format!("{v:.16e}")),
            ])?;
        }
        w.flush()?;
        drop(w);
        self.write_json(
            "linf.json",
            cmd,
            json!({ "max_ratio": r.max_ratio, "delta1": r.delta1, "m0": r.m0, "sigma": sigma, "n_samples": n }),
        )
    }

    fn kalman(&mut self, cmd: Subcommand) -> Result<Value, CliError> {
        let (a0, b) = self.loaded.scenario.kalman_pair()?;
        let k = kalman_matrix(&a0, &b);
        let rank = kalman_rank(&k, KALMAN_TOL);
        let dirs = unobservable_directions(&a0, &b, KALMAN_TOL);
        let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        self.write_json(
            "kalman.json",
            cmd,
            json!({
                "dimension": b.len(),
                "rank": rank,
                "full_rank": rank == b.len(),
                "tolerance": KALMAN_TOL,
                "A0": rows(&a0),
                "B": b.iter().copied().collect::<Vec<_>>(),
                "kalman_matrix": rows(&k),
                "singular_values": k.singular_values().iter().copied().collect::<Vec<_>>(),
                "unobservable_directions": dirs.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            }),
        )
    }

    fn control_nonlinear(&mut self, cmd: Subcommand, setup: &Setup) -> Result<Value, CliError> {
        let scn = &self.loaded.scenario;
        let nl = setup
            .nonlinear
            .as_ref()
            .ok_or_else(|| CliError::Scenario(ScenarioError::Schema("missing \"nonlinear\" block".into())))?;
        let nx = setup.grid.nx;
        let y0: Vec<f64> = setup
            .z0
            .iter()
            .enumerate()
            .map(|(k, z)| nl.ybar[k / nx][k % nx] + z)
            .collect();
        let params = FixedPointParams {
            beta0: scn.run.beta0,
            eps: scn.run.eps,
            tol: scn.run.tol,
            max_iters: scn.run.max_iters,
        };
        let outcome = fixed_point_control(&nl.spec, &setup.grid, &setup.family, &setup.weights, &nl.ybar, &y0, &params);
        let z0_sup = setup.z0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        match outcome {
            Ok(o) => {
                o.trace.write_csv(self.writer("fixed_point.csv")?)?;
                self.write_json(
                    "nonlinear.json",
                    cmd,
                    json!({
                        "status": "converged",
                        "params": params,
                        "initial_deviation_sup": z0_sup,
                        "terminal_deviation": o.terminal_deviation,
                        "u_linf": o.control.linf,
                        "class": o.class,
                        "iterations": o.trace.iterates.len(),
                    }),
                )
            }
            Err(e) => {
                let (status, trace) = match &e {
                    NonlinearError::ClassMembershipLost { trace, .. } => ("class_membership_lost", Some(&**trace)),
                    NonlinearError::NoConvergence { trace, .. } => ("no_convergence", Some(&**trace)),
                    _ => ("error", None),
                };
                if let Some(t) = trace {
                    t.write_csv(self.writer("fixed_point.csv")?)?;
                }
                self.write_json(
                    "nonlinear.json",
                    cmd,
                    json!({
                        "status": status,
                        "error": e.to_string(),
                        "params": params,
                        "initial_deviation_sup": z0_sup,
                        "iterations": trace.map_or(0, |t: &FixedPointTrace| t.iterates.len()),
                    }),
                )?;
                Err(solver(e))
            }
        }
    }
}

/// CSV `t,x,value` of a control on its nodes, levels `0..Nt`.
pub fn write_control_csv<W: Write>(grid: &crate::geometry::Grid, u: &ControlField, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "x", "value"])?;
    for m in 0..grid.nt {
        for (k, v) in u.level(m).iter().enumerate() {
            let j = u.nodes.first + k;
            w.write_record([
                format!("{:.16e}", grid.t(m)),
                format!("{:.16e}", grid.x(j)),
                format!("{v:.16e}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
}

/// Loads the scenario named by the arguments and runs the subcommand.
pub fn execute(cli: &Cli) -> Result<Artifacts, CliError> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let loaded = match (&cli.scenario, &cli.preset) {
        (Some(path), _) => LoadedScenario::from_path(path, &cli.overrides)?,
        (None, Some(name)) => LoadedScenario::preset(name, &cli.overrides)?,
        (None, None) => {
            return Err(CliError::Scenario(ScenarioError::Schema(
                "give a preset name or --scenario PATH".into(),
            )))
        }
    };
    Runner::new(&loaded, &cli.out, cli.seed).run(cli.command)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(a) => {
            for f in &a.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("nullctl: {e}");
            if let CliError::Validation(r) = &e {
                for c in r.failures() {
                    eprintln!("  FAIL {}[{}] {}", c.relation, c.index.map_or("-".into(), |i| i.to_string()), c.detail);
                }
            }
            if std::fs::create_dir_all(&cli.out).is_ok() {
                if let Ok(f) = File::create(cli.out.join("error.json")) {
                    let _ = serde_json::to_writer_pretty(
                        f,
                        &ErrorReport {
                            error: &e.to_string(),
                            exit_code: code,
                        },
                    );
                }
            }
            code
        }
    }
}
