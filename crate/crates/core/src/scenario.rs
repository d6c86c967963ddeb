//! Scenario files: JSON schema, in-repo presets, dotted-path overrides,
//! content hashing, and assembly of the numerical objects.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::carleman::random_sine_field;
use crate::coupling::{
    check_class_membership, constant_coupling_matrix, CoefficientSet, CouplingError, CouplingTree, SpaceTimeField,
};
use crate::geometry::{
    build_cutoff, check_star_hypotheses, check_tree_hypotheses, GeometryError, Grid, Subdomain, SubdomainFamily,
};
use crate::nonlinear::{check_nonlinear_hypotheses, NonlinearError, NonlinearSpec, Xi};
use crate::pde::{solve_elliptic_stationary, PdeError};
use crate::validation::{Check, ValidationReport};
use crate::weights::{default_delta1, log_grid, WeightError, WeightFamily, WeightParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
    #[error("validation failed ({} failing checks)", .0.failures().count())]
    ValidationFailed(Box<ValidationReport>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Nonlinear(#[from] NonlinearError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

pub const PRESETS: [(&str, &str); 5] = [
    ("star2", include_str!("../presets/star2.json")),
    ("tree4", include_str!("../presets/tree4.json")),
    ("kalman-neg", include_str!("../presets/kalman-neg.json")),
    ("kalman-neg-tree", include_str!("../presets/kalman-neg-tree.json")),
    ("nonlinear-star2", include_str!("../presets/nonlinear-star2.json")),
];

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "Nt")]
    pub nt: usize,
}

/// How a spatial profile is declared.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDecl {
    Zero,
    /// Uniform in space and time.
    Constant { value: f64 },
    /// `height` times the cutoff equal to 1 on `ω̲_i` and supported in `ω_i`.
    Bump { height: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(rename = "M")]
    pub m_bound: f64,
    pub delta: f64,
    pub a: Vec<FieldDecl>,
    pub c: Vec<FieldDecl>,
    #[serde(default)]
    pub waive_class: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixDecl {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanSpec {
    #[serde(rename = "A0")]
    pub a0: MatrixDecl,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum WeightSpecRaw {
    Tag(String),
    Decl(WeightDecl),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, try_from = "WeightSpecRaw")]
pub struct WeightSpec {
    pub lambda: Option<f64>,
    pub s: Option<f64>,
    pub eps_sep: f64,
    pub delta1: Option<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightDecl {
    lambda: Option<f64>,
    s: Option<f64>,
    #[serde(default = "default_eps_sep")]
    eps_sep: f64,
    delta1: Option<f64>,
    #[serde(default = "default_kappa")]
    kappa: f64,
}

fn default_eps_sep() -> f64 {
    0.05
}

fn default_kappa() -> f64 {
    4.0
}

impl TryFrom<WeightSpecRaw> for WeightSpec {
    type Error = String;

    fn try_from(raw: WeightSpecRaw) -> Result<Self, String> {
        match raw {
            WeightSpecRaw::Tag(t) if t == "auto" => Ok(Self::default()),
            WeightSpecRaw::Tag(t) => Err(format!("weights: expected \"auto\" or an object, got {t:?}")),
            WeightSpecRaw::Decl(d) => Ok(Self {
                lambda: d.lambda,
                s: d.s,
                eps_sep: d.eps_sep,
                delta1: d.delta1,
                kappa: d.kappa,
            }),
        }
    }
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            lambda: None,
            s: None,
            eps_sep: default_eps_sep(),
            delta1: None,
            kappa: default_kappa(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    /// `amplitude · sin(mode π x / L)` on the listed components (all if absent).
    Sine {
        #[serde(default = "one_usize")]
        mode: usize,
        #[serde(default = "one_f64")]
        amplitude: f64,
        components: Option<Vec<usize>>,
    },
    /// Random sine combination from the sample generator.
    Random { seed: u64 },
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Sine {
            mode: 1,
            amplitude: 1.0,
            components: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub beta0: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// `|m|` range scanned by the weight-order check.
    pub order_m0: u32,
    pub s_grid: SGridSpec,
    pub lambda_grid: Option<Vec<f64>>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            eps_list: (2..=8).map(|k| 10f64.powi(-k)).collect(),
            n_samples: 100,
            seed: 42,
            beta0: 0.1,
            tol: 1e-10,
            max_iters: 10,
            order_m0: 8,
            s_grid: SGridSpec {
                lo: 1e-2,
                hi: 1e9,
                n: 45,
            },
            lambda_grid: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearDecl {
    pub zeta: Vec<FieldDecl>,
    pub xi: Vec<Xi>,
    /// Stationary sources; `-f(x, 0, 0)` (so `ȳ = 0`) when absent.
    pub gbar: Option<Vec<FieldDecl>>,
    #[serde(default = "default_y_max")]
    pub y_max: f64,
}

fn default_y_max() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub tree: Vec<usize>,
    pub omega0: [f64; 2],
    pub omega: Vec<[f64; 2]>,
    pub omega_under: Vec<[f64; 2]>,
    pub omega_tilde: Vec<[f64; 2]>,
    pub coefficients: Option<CoefficientSpec>,
    pub kalman: Option<KalmanSpec>,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub run: RunSpec,
    pub nonlinear: Option<NonlinearDecl>,
}

/// Parsed scenario plus the JSON it came from (after overrides).
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub raw: Value,
    pub hash: String,
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn parse_json(text: &str) -> Result<Value, ScenarioError> {
    serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ScenarioError::Schema(e.to_string()),
        _ => ScenarioError::Parse(e.to_string()),
    })
}

/// Sets `path` (dot-separated; numeric segments index arrays) to `value`,
/// parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ScenarioError> {
    let bad = |msg: &str| ScenarioError::Override(assignment.to_string(), msg.to_string());
    let (path, raw) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad("empty path segment"));
    }
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| bad("array index expected"))?;
                let slot = items.get_mut(idx).ok_or_else(|| bad("array index out of range"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad("path descends into a scalar")),
        };
    }
    unreachable!("non-empty path returns inside the loop")
}

/// SHA-256 of the compact JSON serialization.
pub fn scenario_hash(raw: &Value) -> String {
    let digest = Sha256::digest(raw.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedScenario {
    pub fn from_value(mut raw: Value, overrides: &[String]) -> Result<Self, ScenarioError> {
        for o in overrides {
            apply_override(&mut raw, o)?;
        }
        let scenario: Scenario = serde_json::from_value(raw.clone()).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        let hash = scenario_hash(&raw);
        Ok(Self { scenario, raw, hash })
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Self, ScenarioError> {
        Self::from_value(parse_json(text)?, overrides)
    }

    pub fn preset(name: &str, overrides: &[String]) -> Result<Self, ScenarioError> {
        let text = preset_source(name).ok_or_else(|| ScenarioError::UnknownPreset(name.to_string()))?;
        Self::from_str(text, overrides)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text, overrides)
    }
}

/// All numerical objects a subcommand may need.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub tree: CouplingTree,
    pub family: SubdomainFamily,
    pub coeffs: CoefficientSet,
    pub weights: WeightFamily,
    pub z0: Vec<f64>,
    pub delta1: f64,
    pub nonlinear: Option<NonlinearSetup>,
}

#[derive(Debug, Clone)]
pub struct NonlinearSetup {
    pub spec: NonlinearSpec,
    /// Stationary state `ȳ`, per component.
    pub ybar: Vec<Vec<f64>>,
}

fn subdomain(grid: &Grid, iv: [f64; 2]) -> Result<Subdomain, GeometryError> {
    Subdomain::new(grid, iv[0], iv[1])
}

fn profile(grid: &Grid, fam: &SubdomainFamily, component: usize, decl: &FieldDecl) -> Result<Vec<f64>, ScenarioError> {
    Ok(match decl {
        FieldDecl::Zero => vec![0.0; grid.nx],
        FieldDecl::Constant { value } => vec![*value; grid.nx],
        FieldDecl::Bump { height } => {
            if component == 0 {
                return Err(ScenarioError::Schema("bump profiles need a driven component (index >= 1)".into()));
            }
            let gamma = build_cutoff(grid, fam.driven(component), &fam.omega_under[component], 1.0)?;
            gamma.into_iter().map(|g| height * g).collect()
        }
    })
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.tree.len()
    }

    pub fn build_grid(&self) -> Result<Grid, ScenarioError> {
        let g = self.grid;
        Ok(Grid::new(g.length, g.nx, g.horizon, g.nt)?)
    }

    pub fn build_family(&self, grid: &Grid) -> Result<SubdomainFamily, ScenarioError> {
        let n = self.n();
        for (key, len, want) in [
            ("omega", self.omega.len(), n),
            ("omega_under", self.omega_under.len(), n + 1),
            ("omega_tilde", self.omega_tilde.len(), n + 1),
        ] {
            if len != want {
                return Err(ScenarioError::Schema(format!("{key}: expected {want} intervals, got {len}")));
            }
        }
        let list = |v: &[[f64; 2]]| v.iter().map(|iv| subdomain(grid, *iv)).collect::<Result<Vec<_>, _>>();
        Ok(SubdomainFamily::new(
            subdomain(grid, self.omega0)?,
            list(&self.omega)?,
            list(&self.omega_under)?,
            list(&self.omega_tilde)?,
        )?)
    }

    pub fn build_coefficients(&self, grid: &Grid, fam: &SubdomainFamily) -> Result<CoefficientSet, ScenarioError> {
        let n = self.n();
        let Some(spec) = &self.coefficients else {
            return Ok(CoefficientSet::zeros(grid, n));
        };
        if spec.a.len() != n || spec.c.len() != n + 1 {
            return Err(ScenarioError::Schema(format!(
                "coefficients: expected {n} entries in a and {} in c",
                n + 1
            )));
        }
        let a = (1..=n)
            .map(|i| profile(grid, fam, i, &spec.a[i - 1]).map(|p| SpaceTimeField::from_spatial(grid, &p)))
            .collect::<Result<Vec<_>, _>>()?;
        let c = (0..=n)
            .map(|j| profile(grid, fam, j, &spec.c[j]).map(|p| SpaceTimeField::from_spatial(grid, &p)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CoefficientSet::new(a, c, spec.m_bound, spec.delta)?)
    }

    pub fn weight_params(&self) -> WeightParams {
        WeightParams {
            lambda: self.weights.lambda,
            s: self.weights.s,
            eps_sep: self.weights.eps_sep,
            kappa: self.weights.kappa,
        }
    }

    pub fn initial_state(&self, grid: &Grid) -> Result<Vec<f64>, ScenarioError> {
        let n_comp = self.n() + 1;
        Ok(match &self.initial {
            InitialSpec::Zero => vec![0.0; n_comp * grid.nx],
            InitialSpec::Sine {
                mode,
                amplitude,
                components,
            } => {
                if let Some(bad) = components.iter().flatten().find(|c| **c >= n_comp) {
                    return Err(ScenarioError::Schema(format!("initial.components: {bad} is out of range")));
                }
                let on = |c: usize| components.as_ref().is_none_or(|list| list.contains(&c));
                (0..n_comp * grid.nx)
                    .map(|k| {
                        let (c, j) = (k / grid.nx, k % grid.nx);
                        if on(c) {
                            amplitude * (*mode as f64 * std::f64::consts::PI * grid.x(j) / grid.length).sin()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            InitialSpec::Random { seed } => random_sine_field(grid, n_comp, &mut ChaCha8Rng::seed_from_u64(*seed)),
        })
    }

    /// `(A₀, B)` from the `kalman` block, else from constant coefficients
    /// and `B = e₀`.
    pub fn kalman_pair(&self) -> Result<(DMatrix<f64>, DVector<f64>), ScenarioError> {
        let n1 = self.n() + 1;
        if let Some(k) = &self.kalman {
            let a0 = match &k.a0 {
                MatrixDecl::Nested(rows) => {
                    if rows.len() != n1 || rows.iter().any(|r| r.len() != n1) {
                        return Err(ScenarioError::Schema(format!("kalman.A0 must be {n1}x{n1}")));
                    }
                    DMatrix::from_fn(n1, n1, |i, j| rows[i][j])
                }
                MatrixDecl::Flat(v) => {
                    if v.len() != n1 * n1 {
                        return Err(ScenarioError::Schema(format!("kalman.A0 must hold {} entries", n1 * n1)));
                    }
                    DMatrix::from_row_slice(n1, n1, v)
                }
            };
            if k.b.len() != n1 {
                return Err(ScenarioError::Schema(format!("kalman.B must hold {n1} entries")));
            }
            return Ok((a0, DVector::from_column_slice(&k.b)));
        }
        let spec = self
            .coefficients
            .as_ref()
            .ok_or_else(|| ScenarioError::Schema("kalman analysis needs a kalman block or constant coefficients".into()))?;
        let constant = |d: &FieldDecl| match d {
            FieldDecl::Zero => Ok(0.0),
            FieldDecl::Constant { value } => Ok(*value),
            FieldDecl::Bump { .. } => Err(ScenarioError::Schema(
                "kalman analysis needs constant coefficients (found a bump)".into(),
            )),
        };
        let a = spec.a.iter().map(constant).collect::<Result<Vec<_>, _>>()?;
        let c = spec.c.iter().map(constant).collect::<Result<Vec<_>, _>>()?;
        let tree = CouplingTree::validate(&self.tree)?;
        let mut b = DVector::zeros(n1);
        b[0] = 1.0;
        Ok((constant_coupling_matrix(&tree, &a, &c), b))
    }

    pub fn s_grid(&self) -> Vec<f64> {
        let g = self.run.s_grid;
        log_grid(g.lo, g.hi, g.n)
    }

    pub fn build(&self) -> Result<Setup, ScenarioError> {
        let grid = self.build_grid()?;
        let tree = CouplingTree::validate(&self.tree)?;
        let family = self.build_family(&grid)?;
        let coeffs = self.build_coefficients(&grid, &family)?;
        let weights = WeightFamily::build(&grid, &family, &tree, &self.weight_params())?;
        let z0 = self.initial_state(&grid)?;
        let delta1 = self.weights.delta1.unwrap_or_else(|| default_delta1(weights.s));
        let nonlinear = match &self.nonlinear {
            None => None,
            Some(decl) => Some(self.build_nonlinear(&grid, &family, &tree, decl)?),
        };
        Ok(Setup {
            grid,
            tree,
            family,
            coeffs,
            weights,
            z0,
            delta1,
            nonlinear,
        })
    }

    fn build_nonlinear(
        &self,
        grid: &Grid,
        fam: &SubdomainFamily,
        tree: &CouplingTree,
        decl: &NonlinearDecl,
    ) -> Result<NonlinearSetup, ScenarioError> {
        let n1 = self.n() + 1;
        if decl.zeta.len() != n1 || decl.xi.len() != n1 {
            return Err(ScenarioError::Schema(format!("nonlinear: expected {n1} entries in zeta and xi")));
        }
        let zeta = (0..n1)
            .map(|j| profile(grid, fam, j, &decl.zeta[j]))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = match &decl.gbar {
            None => NonlinearSpec::with_trivial_state(tree.clone(), zeta, decl.xi.clone(), decl.y_max)?,
            Some(g) => {
                if g.len() != n1 {
                    return Err(ScenarioError::Schema(format!("nonlinear.gbar: expected {n1} entries")));
                }
                let gbar = (0..n1)
                    .map(|j| profile(grid, fam, j, &g[j]))
                    .collect::<Result<Vec<_>, _>>()?;
                NonlinearSpec::new(tree.clone(), zeta, decl.xi.clone(), gbar, decl.y_max)?
            }
        };
        let (ybar, _) = solve_elliptic_stationary(&spec, grid)?;
        Ok(NonlinearSetup { spec, ybar })
    }
}

impl Setup {
    /// Geometry hypotheses, class membership (unless waived), the weight
    /// certificate, and the nonlinear hypotheses when declared.
    pub fn validate(&self, scenario: &Scenario) -> ValidationReport {
        let mut report = if self.tree.is_star() {
            check_star_hypotheses(&self.family)
        } else {
            check_tree_hypotheses(&self.family, &self.tree)
        };
        let waived = scenario.coefficients.as_ref().is_some_and(|c| c.waive_class);
        if waived {
            report.push(Check::new("class_waived", None, true).with_detail("coefficient class checks waived"));
        } else {
            report.extend(check_class_membership(
                &self.coeffs,
                &self.family,
                self.coeffs.m_bound,
                self.coeffs.delta,
            ));
        }
        report.extend(self.weights.certificate.clone());
        if let Some(nl) = &self.nonlinear {
            let (r, _) = check_nonlinear_hypotheses(&nl.spec, &self.grid, &self.family, &nl.ybar);
            report.extend(r);
        }
        report
    }
}
