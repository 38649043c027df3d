//! Run configuration. Precedence: command-line flags, then the config file,
//! then the defaults below (mirrored in `schema/run_config.schema.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapes_core::free_target::DEFAULT_PAD_FACTOR;
use shapes_core::grid::Grid;
use shapes_core::optimizer::{
    AnsatzKind, EnergyParams, Schedule, DEFAULT_RECOMPUTE_EVERY, DEFAULT_SURROGATE_CONSTANT,
};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Wp,
    Energy,
    Optimize,
    Verify,
    Ansatz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Scaling,
    Microdroplet,
    Continuity,
    Additivity,
    UpperBound,
    Nucleation,
}

impl CheckName {
    pub const ALL: [CheckName; 6] = [
        CheckName::Scaling,
        CheckName::Microdroplet,
        CheckName::Continuity,
        CheckName::Additivity,
        CheckName::UpperBound,
        CheckName::Nucleation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Scaling => "scaling",
            CheckName::Microdroplet => "microdroplet",
            CheckName::Continuity => "continuity",
            CheckName::Additivity => "additivity",
            CheckName::UpperBound => "upper_bound",
            CheckName::Nucleation => "nucleation",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown check {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub lambda: f64,
    pub p: f64,
    pub target_cells: usize,
    pub dim: usize,
    pub spacing: f64,
    pub pad_factor: f64,
    pub recompute_every: usize,
    pub surrogate_constant: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            p: 1.0,
            target_cells: 100,
            dim: 2,
            spacing: 0.1,
            pad_factor: DEFAULT_PAD_FACTOR,
            recompute_every: DEFAULT_RECOMPUTE_EVERY,
            surrogate_constant: DEFAULT_SURROGATE_CONSTANT,
        }
    }
}

impl ParamsConfig {
    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::with_dim(self.dim, self.spacing).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn energy_params(&self, grid: Grid) -> Result<EnergyParams, CliError> {
        let params = EnergyParams {
            lambda: self.lambda,
            p: self.p,
            target_cells: self.target_cells,
            grid,
            pad_factor: self.pad_factor,
            recompute_every: self.recompute_every,
            surrogate_constant: self.surrogate_constant,
        };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t0: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t0: 0.5,
            alpha: 0.998,
            steps: 1500,
        }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = Schedule {
            t0: self.t0,
            alpha: self.alpha,
            steps: self.steps,
        };
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, must match the subcommand being run.
    pub command: Option<CommandKind>,
    /// Input shape (GS1). Required by `wp` and `energy`; optional starting
    /// shape for `optimize`.
    pub shape: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub params: ParamsConfig,
    pub schedule: ScheduleConfig,
    pub seeds: Vec<u64>,
    /// Multi-start initial shapes for `optimize` when no shape is given.
    pub starts: Vec<AnsatzKind>,
    /// Shape built by `ansatz`.
    pub ansatz: AnsatzKind,
    /// Use the cluster-additive solve in `wp`.
    pub split: bool,
    pub checks: Vec<CheckName>,
    /// Smaller instances for `verify`, for smoke runs.
    pub quick: bool,
    /// Replaces the tolerance of every report of the named check.
    pub tolerance_overrides: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            shape: None,
            out_dir: PathBuf::from("out"),
            params: ParamsConfig::default(),
            schedule: ScheduleConfig::default(),
            seeds: vec![1],
            starts: vec![
                AnsatzKind::Ball,
                AnsatzKind::Cylinder { ratio: 4.0 },
                AnsatzKind::Droplets { m: 2 },
                AnsatzKind::Droplets { m: 4 },
            ],
            ansatz: AnsatzKind::Ball,
            split: false,
            checks: CheckName::ALL.to_vec(),
            quick: false,
            tolerance_overrides: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Hex SHA-256 of the canonical JSON of the effective config. `out_dir` is
    /// excluded so identical runs into different directories hash alike.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out_dir");
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("value serializes")))
    }

    pub fn check_command(&self, cmd: CommandKind) -> Result<(), CliError> {
        match self.command {
            Some(c) if c != cmd => Err(CliError::Usage(format!(
                "config is for command {c:?} but {cmd:?} was requested"
            ))),
            _ => Ok(()),
        }
    }
}

/// Parses `ball`, `cylinder:<ratio>`, `droplets:<m>` or `segments:<k>`.
pub fn parse_ansatz(s: &str) -> Result<AnsatzKind, String> {
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    let need = || arg.ok_or_else(|| format!("ansatz {kind:?} needs an argument, e.g. {kind}:2"));
    match kind {
        "ball" if arg.is_none() => Ok(AnsatzKind::Ball),
        "cylinder" => need()?
            .parse()
            .map(|ratio| AnsatzKind::Cylinder { ratio })
            .map_err(|e| format!("cylinder ratio: {e}")),
        "droplets" => need()?
            .parse()
            .map(|m| AnsatzKind::Droplets { m })
            .map_err(|e| format!("droplet count: {e}")),
        "segments" => need()?
            .parse()
            .map(|k| AnsatzKind::Segments1d { k })
            .map_err(|e| format!("segment count: {e}")),
        _ => Err(format!("unknown ansatz {s:?}")),
    }
}
