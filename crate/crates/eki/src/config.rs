//! Run configuration, read from JSON and overridden by command-line flags.

use std::path::{Path, PathBuf};

use eki_core::flow::{FailurePolicy, FlowConfig, FlowVariant};
use eki_core::imaging::{Camera, Metric};
use eki_core::model::ParameterScaling;
use eki_core::ode::StepControl;
use eki_core::rod::RodConfig;
use eki_core::subsample::LearningRateSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: f64,
    /// Prior shape `D0`; identity when absent.
    pub d0: Option<Vec<Vec<f64>>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            d0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    pub mean: Vec<f64>,
    /// Per-component standard deviation of the initial draw.
    pub spread: Vec<f64>,
    /// Overrides the run seed for the initial draw.
    pub seed: Option<u64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            size: 3,
            mean: vec![0.0, 0.0],
            spread: vec![0.5, 0.5],
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub a: f64,
    pub b: f64,
    pub t_cutoff: Option<f64>,
    pub n_post_switches: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            a: 10.0,
            b: 10.0,
            t_cutoff: Some(10.0),
            n_post_switches: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, horizon: f64) -> Result<LearningRateSchedule> {
        let s = LearningRateSchedule::new(self.a, self.b)?;
        Ok(match self.t_cutoff {
            Some(tc) => s.with_cutoff(tc, self.n_post_switches, horizon)?,
            None => s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Trajectory CSV to analyse.
    pub trajectory: Option<PathBuf>,
    /// Second trajectory to compare against.
    pub reference: Option<PathBuf>,
    /// Fitting window `[t_lo, t_hi]`; the later half (in log time) when absent.
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rod: RodConfig,
    pub camera: Camera,
    pub sigma: u32,
    pub metric: Metric,
    pub scaling: ParameterScaling,
    /// Nondimensional parameters that generate synthetic data.
    pub truth: [f64; 2],
    /// External image used as data instead of the synthetic one.
    pub data: Option<PathBuf>,
    /// Observation noise standard deviation in pixels; `Γ = noise_std² Id`.
    pub noise_std: f64,
    pub prior: PriorConfig,
    pub ensemble: EnsembleConfig,
    pub flow: FlowConfig,
    pub n_sub: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Worker threads for forward evaluations; 0 uses all cores.
    pub workers: usize,
    pub out: PathBuf,
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rod: RodConfig::default(),
            camera: Camera::default(),
            sigma: 128,
            metric: Metric::Euclidean,
            scaling: ParameterScaling::default(),
            truth: [0.5, -0.4],
            data: None,
            noise_std: 30.0,
            prior: PriorConfig::default(),
            ensemble: EnsembleConfig::default(),
            flow: FlowConfig {
                variant: FlowVariant::Regularised,
                rho_vi: 0.0,
                t_end: 100.0,
                control: StepControl {
                    rel_tol: 1e-3,
                    abs_tol: 1e-6,
                    min_step: 1e-12,
                    max_step: 1.0,
                },
                initial_step: None,
                samples_per_decade: 8,
                first_sample: 1e-3,
                failure_policy: FailurePolicy::Regulariser,
            },
            n_sub: 5,
            schedule: ScheduleConfig::default(),
            seed: 0,
            workers: 0,
            out: PathBuf::from("out"),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub sigma: Option<u32>,
}

impl RunConfig {
    /// Parses a configuration; fields absent from `text` keep their run defaults,
    /// including fields of partially given sections.
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        Self::from_value(serde_json::from_str(text)?)
    }

    fn from_value(value: serde_json::Value) -> std::result::Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, value);
        serde_json::from_value(base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        // A manifest carries the resolved configuration under `config`.
        let value = match value {
            serde_json::Value::Object(mut m)
                if m.contains_key("version") && m.contains_key("config") =>
            {
                m.remove("config").unwrap()
            }
            other => other,
        };
        Self::from_value(value).map_err(|e| CliError::parse(path, e))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(m) = o.metric {
            self.metric = m;
        }
        if let Some(s) = o.sigma {
            self.sigma = s;
        }
    }

    pub fn ensemble_seed(&self) -> u64 {
        self.ensemble.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.rod.validate()?;
        self.camera.validate()?;
        self.scaling.validate()?;
        self.flow.validate()?;
        if !(1..=255).contains(&self.sigma) {
            return Err(CliError::Config(format!(
                "threshold must lie in 1..=255, got {}",
                self.sigma
            )));
        }
        if !(self.noise_std > 0.0) {
            return Err(CliError::Config("noise_std must be positive".into()));
        }
        if self.ensemble.size < 2 {
            return Err(CliError::Config(
                "the ensemble needs at least 2 particles".into(),
            ));
        }
        if self.ensemble.mean.len() != 2 || self.ensemble.spread.len() != 2 {
            return Err(CliError::Config(
                "ensemble mean and spread must have 2 components".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}
