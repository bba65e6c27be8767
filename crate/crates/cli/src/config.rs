//! Run configuration: TOML with dotted sections, unknown keys rejected.

use junctionflow::checks::{compatible_state, random_admissible, LincheckConfig};
use junctionflow::flow::FlowConfig;
use junctionflow::shape::HeightState;
use junctionflow::symbol::GridConfig;
use junctionflow::{build_reference, AngleWeights, FlowError, GeometrySpec, ReferenceCluster};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `triod`, `double_bubble`, `prism`, `circle`, `arc`, or the path of a
    /// node table relative to the configuration file.
    pub scenario: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default)]
    pub eigs: EigsSection,
    #[serde(default)]
    pub ls_check: GridConfig,
    #[serde(default)]
    pub lincheck: LincheckSection,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub gamma: Option<[f64; 3]>,
    pub theta: Option<[f64; 3]>,
    pub beta: [f64; 3],
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            gamma: None,
            theta: None,
            beta: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub leg_length: f64,
    pub areas: [f64; 2],
    pub period: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            leg_length: 1.0,
            areas: [1.0, 1.0],
            period: 1.0,
            radius: 1.0,
            angle: std::f64::consts::FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Intervals per chart.
    pub nodes: usize,
    /// Nodes around the junction line of extruded scenarios.
    pub ring: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { nodes: 64, ring: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// The reference itself.
    Zero,
    /// Smooth random heights satisfying the junction constraint only.
    Random,
    /// Random heights corrected to satisfy all compatibility conditions.
    Compatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub amplitude: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::Zero,
            amplitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    pub directory: PathBuf,
    /// Steps between snapshots; the first and last state are always written.
    pub snapshot_every: usize,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("run"),
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigsSection {
    pub count: usize,
}

impl Default for EigsSection {
    fn default() -> Self {
        Self { count: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LincheckSection {
    pub seed: u64,
    pub amplitude: f64,
    pub epsilons: Vec<f64>,
    /// Largest accepted relative error of the extrapolated differences.
    pub tolerance: f64,
    /// Largest accepted deviation of the sweep slope from 2.
    pub slope_tolerance: f64,
}

impl Default for LincheckSection {
    fn default() -> Self {
        let base = LincheckConfig::default();
        Self {
            seed: base.seed,
            amplitude: base.amplitude,
            epsilons: base.epsilons,
            tolerance: 1e-5,
            slope_tolerance: 0.1,
        }
    }
}

impl LincheckSection {
    pub fn core(&self) -> LincheckConfig {
        LincheckConfig {
            seed: self.seed,
            amplitude: self.amplitude,
            epsilons: self.epsilons.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "ConfigRead",
            ConfigError::Parse(_) => "ConfigParse",
            ConfigError::Invalid(_) => "ConfigInvalid",
        }
    }
}

pub fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Sets `value` at a dotted key, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override {key}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn from_table(table: toml::Table, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.check()?;
    Ok(cfg)
}

impl RunConfig {
    fn check(&self) -> Result<(), ConfigError> {
        if self.mesh.nodes < 8 {
            return Err(ConfigError::Invalid(format!("mesh.nodes = {} but at least 8 are required", self.mesh.nodes)));
        }
        if self.outputs.snapshot_every == 0 {
            return Err(ConfigError::Invalid("outputs.snapshot_every must be positive".into()));
        }
        if self.eigs.count == 0 {
            return Err(ConfigError::Invalid("eigs.count must be positive".into()));
        }
        self.flow.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Replaces every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.ls_check.seed = seed;
        self.lincheck.seed = seed;
    }

    pub fn angle_weights(&self) -> Result<AngleWeights, FlowError> {
        let w = &self.weights;
        match (w.gamma, w.theta) {
            (Some(g), None) => AngleWeights::from_gamma(g, w.beta),
            (None, Some(t)) => AngleWeights::from_theta(t, w.beta),
            _ => Err(FlowError::InvalidWeights(
                "exactly one of weights.gamma and weights.theta must be given".into(),
            )),
        }
    }

    pub fn geometry_spec(&self) -> Result<GeometrySpec, FlowError> {
        let g = &self.geometry;
        let n = self.mesh.nodes;
        let name = self
            .scenario
            .as_deref()
            .ok_or_else(|| FlowError::DomainError("no scenario given".into()))?;
        Ok(match name {
            "triod" => GeometrySpec::Triod {
                leg_length: g.leg_length,
                intervals: n,
            },
            "double_bubble" => GeometrySpec::DoubleBubble {
                areas: g.areas,
                intervals: n,
            },
            "prism" => GeometrySpec::Prism {
                leg_length: g.leg_length,
                period: g.period,
                intervals: n,
                ring: self.mesh.ring,
            },
            "circle" => GeometrySpec::Circle {
                radius: g.radius,
                intervals: n,
            },
            "arc" => GeometrySpec::Arc {
                radius: g.radius,
                angle: g.angle,
                intervals: n,
            },
            path => GeometrySpec::Table {
                path: self.base_dir.join(path),
            },
        })
    }

    pub fn cluster(&self) -> Result<ReferenceCluster, FlowError> {
        let w = self.angle_weights()?;
        build_reference(&self.geometry_spec()?, &w)
    }

    pub fn initial_state(&self, cl: &ReferenceCluster) -> Result<HeightState, FlowError> {
        let amp = self.initial.amplitude;
        match self.initial.kind {
            InitialKind::Zero => Ok(HeightState::zeros(cl)),
            InitialKind::Random => Ok(random_admissible(cl, self.seed, amp)),
            InitialKind::Compatible => Ok(compatible_state(cl, self.seed, amp, 1e-11)?.state),
        }
    }
}
