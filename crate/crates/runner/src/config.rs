//! Experiment configuration files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use perc_core::explore::Caps;
use perc_core::lattice::{Geometry, ModelSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field, reason: reason.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentKind {
    TwoPoint,
    OneArm,
    Pioneers,
    Susceptibility,
    Plateau,
    Triangle,
    PtSolve,
    MassFit,
    Oracle,
    OsssCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::TwoPoint,
        ExperimentKind::OneArm,
        ExperimentKind::Pioneers,
        ExperimentKind::Susceptibility,
        ExperimentKind::Plateau,
        ExperimentKind::Triangle,
        ExperimentKind::PtSolve,
        ExperimentKind::MassFit,
        ExperimentKind::Oracle,
        ExperimentKind::OsssCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TwoPoint => "two_point",
            ExperimentKind::OneArm => "one_arm",
            ExperimentKind::Pioneers => "pioneers",
            ExperimentKind::Susceptibility => "susceptibility",
            ExperimentKind::Plateau => "plateau",
            ExperimentKind::Triangle => "triangle",
            ExperimentKind::PtSolve => "pt_solve",
            ExperimentKind::MassFit => "mass_fit",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::OsssCheck => "osss_check",
        }
    }

    /// Exact experiments need no replica count.
    pub fn needs_replicas(self) -> bool {
        !matches!(self, ExperimentKind::Oracle | ExperimentKind::OsssCheck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    #[serde(default = "one")]
    pub range: i64,
    /// Torus side; absent for `Z^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<i64>,
}

fn one() -> i64 {
    1
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec, ConfigError> {
        let geometry = match self.period {
            Some(period) => Geometry::Torus { period },
            None => Geometry::InfiniteLattice,
        };
        ModelSpec::new(self.dimension, geometry, self.range, 0.0)
            .map_err(|e| ConfigError::invalid("model", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsConfig {
    #[serde(default = "default_volume")]
    pub max_volume: usize,
    #[serde(default = "default_radius")]
    pub max_radius: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_intrinsic: Option<u32>,
}

fn default_volume() -> usize {
    1 << 22
}

fn default_radius() -> i64 {
    1 << 10
}

impl Default for CapsConfig {
    fn default() -> Self {
        CapsConfig { max_volume: default_volume(), max_radius: default_radius(), max_intrinsic: None }
    }
}

impl CapsConfig {
    pub fn caps(&self) -> Result<Caps, ConfigError> {
        Caps::new(self.max_volume, self.max_radius, self.max_intrinsic)
            .map_err(|e| ConfigError::invalid("caps", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPointParams {
    pub p: Vec<f64>,
    pub x: Vec<Vec<i64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Extrinsic,
    Intrinsic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneArmParams {
    pub p: Vec<f64>,
    pub radii: Vec<i64>,
    pub metric: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PioneerParams {
    pub p: Vec<f64>,
    pub n: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SusceptibilityParams {
    pub p: Vec<f64>,
}

/// Either explicit `p` values or a `lambda` whose `p_T` is solved first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangleParams {
    pub p: Vec<f64>,
    /// Box radius of the `Z^d` two-point grid.
    pub radius: i64,
    /// Also write each two-point grid as a grid CSV.
    #[serde(default)]
    pub save_grids: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtSolveParams {
    pub lambda: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrectionConfig {
    Named(String),
    Exponent(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassFitParams {
    pub p: Vec<f64>,
    pub n_max: u64,
    /// `"none"`, `"ornstein_zernike"` or an exponent `kappa`.
    #[serde(default = "no_correction")]
    pub correction: CorrectionConfig,
}

fn no_correction() -> CorrectionConfig {
    CorrectionConfig::Named("none".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    /// `Lambda_radius` in the model (or the whole torus when `radius` is
    /// at least half the period).
    Box { radius: i64 },
    Rect { lo: Vec<i64>, hi: Vec<i64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    Connects { from: Vec<i64>, to: Vec<i64> },
    ClusterAtLeast { at: Vec<i64>, k: usize },
    /// `E|P_x(n)|` for every plane with nonzero mean, and `E|P_x|`.
    PioneerMeans { at: Vec<i64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub p: Vec<f64>,
    pub graph: GraphConfig,
    pub events: Vec<EventConfig>,
    #[serde(default = "default_russo_h")]
    pub russo_h: f64,
}

fn default_russo_h() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsssParams {
    pub instances: u64,
    /// Fraction of instances drawn with a two-layer ghost measure.
    #[serde(default = "half")]
    pub ghost_fraction: f64,
}

fn half() -> f64 {
    0.5
}

/// A parsed configuration file. Only the table matching the requested
/// experiment is used; the others may be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_point: Option<TwoPointParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_arm: Option<OneArmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pioneers: Option<PioneerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub susceptibility: Option<SusceptibilityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau: Option<PlateauParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triangle: Option<TriangleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt_solve: Option<PtSolveParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_fit: Option<MassFitParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub osss_check: Option<OsssParams>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }
}

/// Everything an experiment needs, checked up front.
#[derive(Clone, Debug)]
pub struct Validated {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replicas: u64,
    pub workers: usize,
    pub model: Option<ModelSpec>,
    pub caps: Caps,
    pub config: ExperimentConfig,
}

fn check_ps(ps: &[f64]) -> Result<(), ConfigError> {
    nonempty("p", ps)?;
    match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(ConfigError::invalid("p", format!("{p} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn nonempty<T>(field: &'static str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        return Err(ConfigError::invalid(field, "grid is empty"));
    }
    Ok(())
}

fn check_point(field: &'static str, x: &[i64], model: &ModelSpec) -> Result<(), ConfigError> {
    model.check_point(x).map_err(|e| ConfigError::invalid(field, e.to_string()))
}

fn section<'a, T>(v: &'a Option<T>, name: &'static str) -> Result<&'a T, ConfigError> {
    v.as_ref().ok_or(ConfigError::Missing(name))
}

fn torus_only(model: &ModelSpec, kind: ExperimentKind) -> Result<(), ConfigError> {
    if !model.is_torus() {
        return Err(ConfigError::invalid("model.period", format!("{} needs a torus model", kind.name())));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Validate the fields used by `kind`, with command-line overrides
    /// already applied.
    pub fn validate(self, kind: ExperimentKind) -> Result<Validated, ConfigError> {
        let seed = self.seed.ok_or(ConfigError::Missing("seed"))?;
        let replicas = match (kind.needs_replicas(), self.replicas) {
            (true, None) => return Err(ConfigError::Missing("replicas")),
            (true, Some(0)) => return Err(ConfigError::invalid("replicas", "must be positive")),
            (_, r) => r.unwrap_or(0),
        };
        let workers = self.workers.unwrap_or(1);
        if workers == 0 {
            return Err(ConfigError::invalid("workers", "must be positive"));
        }
        let caps = self.caps.caps()?;
        let model = match (&self.model, kind) {
            (None, ExperimentKind::OsssCheck) => None,
            (None, _) => return Err(ConfigError::Missing("model")),
            (Some(m), _) => Some(m.spec()?),
        };
        if let Some(m) = &model {
            self.validate_params(kind, m)?;
        } else {
            let o = section(&self.osss_check, "osss_check")?;
            if o.instances == 0 {
                return Err(ConfigError::invalid("osss_check.instances", "must be positive"));
            }
            if !(0.0..=1.0).contains(&o.ghost_fraction) {
                return Err(ConfigError::invalid("osss_check.ghost_fraction", "must lie in [0, 1]"));
            }
        }
        Ok(Validated { kind, seed, replicas, workers, model, caps, config: self })
    }

    fn validate_params(&self, kind: ExperimentKind, m: &ModelSpec) -> Result<(), ConfigError> {
        match kind {
            ExperimentKind::TwoPoint => {
                let t = section(&self.two_point, "two_point")?;
                check_ps(&t.p)?;
                nonempty("two_point.x", &t.x)?;
                for x in &t.x {
                    check_point("two_point.x", x, m)?;
                }
            }
            ExperimentKind::OneArm => {
                let t = section(&self.one_arm, "one_arm")?;
                check_ps(&t.p)?;
                nonempty("one_arm.radii", &t.radii)?;
                if t.radii.iter().any(|&r| r < 1) {
                    return Err(ConfigError::invalid("one_arm.radii", "radii must be at least 1"));
                }
                if let (Some(r), Metric::Extrinsic) = (m.period(), t.metric) {
                    if t.radii.iter().any(|&k| k > r / 2) {
                        return Err(ConfigError::invalid("one_arm.radii", "exceeds half the torus period"));
                    }
                }
            }
            ExperimentKind::Pioneers => {
                let t = section(&self.pioneers, "pioneers")?;
                check_ps(&t.p)?;
                nonempty("pioneers.n", &t.n)?;
                if m.is_torus() {
                    return Err(ConfigError::invalid("model.period", "pioneers live on Z^d"));
                }
                if t.n.contains(&0) {
                    return Err(ConfigError::invalid("pioneers.n", "plane index must be at least 1"));
                }
            }
            ExperimentKind::Susceptibility => {
                check_ps(&section(&self.susceptibility, "susceptibility")?.p)?;
            }
            ExperimentKind::Plateau => {
                torus_only(m, kind)?;
                let t = section(&self.plateau, "plateau")?;
                match (&t.p, t.lambda) {
                    (Some(ps), None) => check_ps(ps)?,
                    (None, Some(l)) => check_lambda("plateau.lambda", l, m)?,
                    _ => return Err(ConfigError::invalid("plateau", "give exactly one of `p` and `lambda`")),
                }
                check_tolerance("plateau.tolerance", t.tolerance)?;
            }
            ExperimentKind::Triangle => {
                torus_only(m, kind)?;
                let t = section(&self.triangle, "triangle")?;
                check_ps(&t.p)?;
                if t.radius < 1 {
                    return Err(ConfigError::invalid("triangle.radius", "must be at least 1"));
                }
            }
            ExperimentKind::PtSolve => {
                torus_only(m, kind)?;
                let t = section(&self.pt_solve, "pt_solve")?;
                nonempty("pt_solve.lambda", &t.lambda)?;
                for &l in &t.lambda {
                    check_lambda("pt_solve.lambda", l, m)?;
                }
                check_tolerance("pt_solve.tolerance", t.tolerance)?;
            }
            ExperimentKind::MassFit => {
                let t = section(&self.mass_fit, "mass_fit")?;
                check_ps(&t.p)?;
                if t.n_max < 4 {
                    return Err(ConfigError::invalid("mass_fit.n_max", "a fit needs at least 4 points"));
                }
                if let Some(r) = m.period() {
                    if t.n_max as i64 > r / 2 {
                        return Err(ConfigError::invalid("mass_fit.n_max", "exceeds half the torus period"));
                    }
                }
                correction(&t.correction, m.dimension)?;
            }
            ExperimentKind::Oracle => {
                let t = section(&self.oracle, "oracle")?;
                check_ps(&t.p)?;
                nonempty("oracle.events", &t.events)?;
                if !(t.russo_h > 0.0 && t.russo_h < 0.5) {
                    return Err(ConfigError::invalid("oracle.russo_h", "must lie in (0, 1/2)"));
                }
                if let GraphConfig::Rect { lo, hi } = &t.graph {
                    check_point("oracle.graph.lo", lo, m)?;
                    check_point("oracle.graph.hi", hi, m)?;
                }
                for ev in &t.events {
                    match ev {
                        EventConfig::Connects { from, to } => {
                            check_point("oracle.events.from", from, m)?;
                            check_point("oracle.events.to", to, m)?;
                        }
                        EventConfig::ClusterAtLeast { at, .. } => check_point("oracle.events.at", at, m)?,
                        EventConfig::PioneerMeans { at } => {
                            if m.is_torus() {
                                return Err(ConfigError::invalid("oracle.events", "pioneers need a Z^d embedding"));
                            }
                            check_point("oracle.events.at", at, m)?
                        }
                    }
                }
            }
            ExperimentKind::OsssCheck => {
                let o = section(&self.osss_check, "osss_check")?;
                if o.instances == 0 {
                    return Err(ConfigError::invalid("osss_check.instances", "must be positive"));
                }
                if !(0.0..=1.0).contains(&o.ghost_fraction) {
                    return Err(ConfigError::invalid("osss_check.ghost_fraction", "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

fn check_lambda(field: &'static str, l: f64, m: &ModelSpec) -> Result<(), ConfigError> {
    let v = m.volume().expect("torus") as f64;
    let (lo, hi) = (v.powf(-1.0 / 3.0), v.powf(2.0 / 3.0));
    if !(l >= lo * (1.0 - 1e-12) && l <= hi * (1.0 + 1e-12)) {
        return Err(ConfigError::invalid(field, format!("{l} outside [V^(-1/3), V^(2/3)] = [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_tolerance(field: &'static str, t: f64) -> Result<(), ConfigError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ConfigError::invalid(field, "must be finite and nonnegative"));
    }
    Ok(())
}

pub fn correction(c: &CorrectionConfig, d: usize) -> Result<perc_core::estimators::MassCorrection, ConfigError> {
    use perc_core::estimators::MassCorrection;
    match c {
        CorrectionConfig::Named(s) if s == "none" => Ok(MassCorrection::None),
        CorrectionConfig::Named(s) if s == "ornstein_zernike" => Ok(MassCorrection::ornstein_zernike(d)),
        CorrectionConfig::Exponent(k) if k.is_finite() => Ok(MassCorrection::Power(*k)),
        other => Err(ConfigError::invalid(
            "mass_fit.correction",
            format!("{other:?}: expected \"none\", \"ornstein_zernike\" or a number"),
        )),
    }
}
