//! Run configuration (TOML). Every section is optional in the input file;
//! [`RunConfig::resolve`] writes all defaults back so a resolved file fully
//! determines a run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::demos::{default_waypoints, DemoConfig};
use crate::density::DensityConfig;
use crate::dynamics::TrainConfig;
use crate::env::{make_env, EnvOverrides, EnvSpec, TaskId};
use crate::error::{Error, Result};
use crate::planner::PlannerConfig;
use crate::scalar::Scalar;
use crate::value::LyapunovConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Terminal cost from a value-function ensemble.
    Saved,
    /// Terminal cost `s_v · V(x)` from the Lyapunov network.
    Salved,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Saved => "saved",
            Mode::Salved => "salved",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saved" => Ok(Mode::Saved),
            "salved" => Ok(Mode::Salved),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected saved|salved)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_width: usize,
    /// Hidden layers per network; two hidden plus the output gives three
    /// affine layers.
    pub hidden_layers: usize,
    pub ensemble_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_width: 500,
            hidden_layers: 2,
            ensemble_size: 5,
        }
    }
}

impl NetworkConfig {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

/// Epoch budget of one refit of every model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefitBudget {
    pub dynamics_epochs: usize,
    pub value_epochs: usize,
    pub lyapunov_epochs: usize,
}

impl Default for RefitBudget {
    fn default() -> Self {
        RefitBudget {
            dynamics_epochs: 5,
            value_epochs: 20,
            lyapunov_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Budget of the fit on demonstrations before the first episode.
    pub initial: RefitBudget,
    /// Budget of the refit after every episode.
    pub per_iteration: RefitBudget,
    /// Record measured wall time in metrics; off keeps metrics byte-stable.
    pub record_wall_time: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            initial: RefitBudget {
                dynamics_epochs: 50,
                value_epochs: 100,
                lyapunov_epochs: 100,
            },
            per_iteration: RefitBudget::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskId,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Load demonstrations from this file instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos_file: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub networks: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub demos: DemoConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

fn default_iterations() -> usize {
    100
}

impl RunConfig {
    pub fn new(task: TaskId, mode: Mode) -> Self {
        RunConfig {
            task,
            mode,
            seed: 0,
            iterations: default_iterations(),
            demos_file: None,
            env: EnvOverrides::default(),
            networks: NetworkConfig::default(),
            train: TrainConfig::default(),
            lyapunov: LyapunovConfig::default(),
            density: DensityConfig::default(),
            planner: PlannerConfig::default(),
            demos: DemoConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }

    /// Reduced setting that runs on one CPU core in minutes: geometry scaled
    /// by 0.3, `T = 50`, width-64 networks, 50 iterations and a lighter CEM.
    pub fn desk(task: TaskId, mode: Mode, seed: u64) -> Self {
        let mut c = RunConfig::new(task, mode);
        c.seed = seed;
        c.iterations = 50;
        c.env.scale = Some(0.3);
        c.env.horizon_t = Some(50);
        c.networks.hidden_width = 64;
        c.planner.horizon = 10;
        c.planner.population = 100;
        c.planner.elites = 10;
        c.planner.cem_iters = 3;
        c.planner.particles = 10;
        c
    }

    pub fn from_toml_str(s: &str, origin: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::TomlParse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn env_spec<T: Scalar>(&self) -> Result<EnvSpec<T>> {
        make_env(self.task, &self.env)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec::<f64>()?;
        self.lyapunov.validate()?;
        self.planner.validate()?;
        self.demos.validate()?;
        if self.networks.ensemble_size == 0 || self.networks.hidden_width == 0 {
            return Err(Error::Config("networks: ensemble_size and hidden_width must be >= 1".into()));
        }
        if !(self.density.alpha > 0.0) {
            return Err(Error::Config("density: alpha must be > 0".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train: batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Fills every environment field and the demo waypoints explicitly,
    /// folding the geometry scale in. Idempotent.
    pub fn resolve(&self) -> Result<Self> {
        self.validate()?;
        let spec: EnvSpec<f64> = self.env_spec()?;
        let scale = self.env.scale.unwrap_or(1.0);
        let mut out = self.clone();
        out.env = EnvOverrides::resolved_from(&spec);
        if out.demos.waypoints.is_none() {
            out.demos.waypoints = Some(
                default_waypoints(self.task)
                    .into_iter()
                    .map(|[x, y]| [x * scale, y * scale])
                    .collect(),
            );
        }
        Ok(out)
    }
}
