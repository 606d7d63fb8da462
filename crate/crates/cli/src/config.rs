//! Run configuration: one TOML file shared by every subcommand, with each
//! field overridable by a command-line flag of the same name.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use ghmm_core::ghmm::LearningConfig;

/// Paths and parameters of a run. Path fields stay optional here; each
/// command requires the subset it reads or writes. Numeric fields carry
/// the pipeline defaults and are range-checked before any command writes
/// to the filesystem.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene description text file.
    pub scene: Option<PathBuf>,
    /// Training corpus CSV.
    pub trajectories: Option<PathBuf>,
    /// Held-out test CSV; `evaluate` falls back to `trajectories`.
    pub test_trajectories: Option<PathBuf>,
    /// Model binary; defaults to `<output_dir>/model.ghmm`.
    pub model: Option<PathBuf>,
    /// Cost map binary; defaults to `<output_dir>/cost_map.bin`.
    pub cost_map: Option<PathBuf>,
    /// Directory all commands write into.
    pub output_dir: Option<PathBuf>,
    /// Cost map cell size in meters.
    pub resolution: f64,
    /// Topology node spacing threshold in meters.
    pub tau: f64,
    /// Cost-difference threshold separating level from sloped transitions.
    pub epsilon: f64,
    /// Node nudge rate of the online topology update, in (0, 1).
    pub epsilon_itm: f64,
    /// Observation noise std-dev; defaults to tau / 2.
    pub sigma_obs: Option<f64>,
    /// Blend rate for incremental Baum-Welch statistics, in (0, 1].
    pub bw_learning_rate: f64,
    /// Dwell timesteps promoting a node to a goal.
    pub dwell_threshold: u64,
    /// Prediction horizon H in timesteps.
    pub horizon: u64,
    /// Baseline preset prior weight (normalization erases its magnitude).
    pub pi0: f64,
    /// Baseline preset transition weight (likewise erased).
    pub a0: f64,
    /// Accepted for explicitness; only `true` is supported. Nothing in
    /// the pipeline draws random numbers at run time.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tau = 2.0;
        RunConfig {
            scene: None,
            trajectories: None,
            test_trajectories: None,
            model: None,
            cost_map: None,
            output_dir: None,
            resolution: 0.5,
            tau,
            epsilon: 0.05,
            epsilon_itm: 0.05,
            sigma_obs: None,
            bw_learning_rate: 0.1,
            dwell_threshold: 50,
            horizon: 75,
            pi0: 0.5,
            a0: 0.5,
            deterministic: true,
        }
    }
}

/// Flag mirror of [`RunConfig`]; set flags override the config file.
#[derive(Debug, Args)]
pub struct Overrides {
    /// Scene description text file.
    #[arg(long, global = true, value_name = "FILE")]
    scene: Option<PathBuf>,
    /// Training corpus CSV (header `id,class,t,x,y[,vx,vy]`).
    #[arg(long, global = true, value_name = "FILE")]
    trajectories: Option<PathBuf>,
    /// Held-out test CSV; `evaluate` falls back to --trajectories.
    #[arg(long, global = true, value_name = "FILE")]
    test_trajectories: Option<PathBuf>,
    /// Model binary [default: <output-dir>/model.ghmm].
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Cost map binary [default: <output-dir>/cost_map.bin].
    #[arg(long, global = true, value_name = "FILE")]
    cost_map: Option<PathBuf>,
    /// Directory the command writes into; required by every writer.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Cost map cell size in meters.
    #[arg(long, global = true)]
    resolution: Option<f64>,
    /// Topology node spacing threshold in meters.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Cost-difference threshold for transition seeding.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Node nudge rate of the online topology update, in (0, 1).
    #[arg(long, global = true)]
    epsilon_itm: Option<f64>,
    /// Observation noise std-dev in meters [default: tau / 2].
    #[arg(long, global = true)]
    sigma_obs: Option<f64>,
    /// Blend rate for incremental Baum-Welch statistics, in (0, 1].
    #[arg(long, global = true)]
    bw_learning_rate: Option<f64>,
    /// Dwell timesteps promoting a node to a goal.
    #[arg(long, global = true)]
    dwell_threshold: Option<u64>,
    /// Prediction horizon H in timesteps.
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Baseline preset prior weight.
    #[arg(long, global = true)]
    pi0: Option<f64>,
    /// Baseline preset transition weight.
    #[arg(long, global = true)]
    a0: Option<f64>,
}

impl RunConfig {
    /// Loads the config file (or the defaults) and applies flag overrides.
    pub fn resolve(config_path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
        let mut cfg = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! take_path {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = flags.$field.clone() {
                    cfg.$field = Some(v);
                })+
            };
        }
        macro_rules! take_value {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = flags.$field {
                    cfg.$field = v;
                })+
            };
        }
        take_path!(
            scene,
            trajectories,
            test_trajectories,
            model,
            cost_map,
            output_dir,
        );
        take_value!(
            resolution,
            tau,
            epsilon,
            epsilon_itm,
            bw_learning_rate,
            dwell_threshold,
            horizon,
            pi0,
            a0,
        );
        if flags.sigma_obs.is_some() {
            cfg.sigma_obs = flags.sigma_obs;
        }
        Ok(cfg)
    }

    /// The learning parameters in the form the model layer consumes.
    pub fn learning(&self) -> LearningConfig {
        LearningConfig {
            epsilon: self.epsilon,
            sigma_obs: self.sigma_obs.unwrap_or(self.tau / 2.0),
            dwell_threshold: self.dwell_threshold,
            bw_learning_rate: self.bw_learning_rate,
            pi0: self.pi0,
            a0: self.a0,
        }
    }

    /// Range-checks every numeric field. Commands call this before
    /// touching the filesystem beyond reads.
    pub fn validate(&self) -> Result<()> {
        // tau first: sigma_obs derives from it, and a derived-field
        // message would point away from the flag the user set.
        for (name, v) in [("resolution", self.resolution), ("tau", self.tau)] {
            if !(v > 0.0) || !v.is_finite() {
                bail!("{name} must be positive and finite, got {v}");
            }
        }
        self.learning().validate()?;
        if !(self.epsilon_itm > 0.0 && self.epsilon_itm < 1.0) {
            bail!("epsilon_itm must lie in (0, 1), got {}", self.epsilon_itm);
        }
        if self.horizon == 0 {
            bail!("horizon must be at least 1");
        }
        if !self.deterministic {
            bail!("deterministic = false is not supported: the pipeline has no run-time randomness to seed");
        }
        Ok(())
    }

    pub fn require_scene(&self) -> Result<&Path> {
        require(&self.scene, "scene", "scene")
    }

    pub fn require_trajectories(&self) -> Result<&Path> {
        require(&self.trajectories, "trajectories", "trajectories")
    }

    /// Test set for evaluation; the training corpus doubles as one.
    pub fn require_test_trajectories(&self) -> Result<&Path> {
        if let Some(p) = &self.test_trajectories {
            return Ok(p);
        }
        require(&self.trajectories, "test set", "test-trajectories")
    }

    pub fn require_output_dir(&self) -> Result<&Path> {
        require(&self.output_dir, "output directory", "output-dir")
    }

    /// Model path, defaulting into the output directory.
    pub fn model_path(&self) -> Result<PathBuf> {
        match &self.model {
            Some(p) => Ok(p.clone()),
            None => Ok(self.require_output_dir()?.join("model.ghmm")),
        }
    }

    /// Cost map path, defaulting into the output directory.
    pub fn cost_map_path(&self) -> Result<PathBuf> {
        match &self.cost_map {
            Some(p) => Ok(p.clone()),
            None => Ok(self.require_output_dir()?.join("cost_map.bin")),
        }
    }
}

fn require<'a>(field: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .with_context(|| format!("{what} is required: pass --{flag} or set it in the config file"))
}
