//! Experiment configuration. One JSON document per experiment; unknown keys
//! are rejected at every level.

use std::path::PathBuf;

use capsize_core::grid::{Grid2D, RegionLabel, RegionSpec};
use capsize_core::ldt::Duration;
use capsize_core::{InitialSampler, RollModelParams};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    CapsizeTime,
    Committor,
    McRate,
    Minact,
    Figure2,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::CapsizeTime => "capsize-time",
            Self::Committor => "committor",
            Self::McRate => "mc-rate",
            Self::Minact => "minact",
            Self::Figure2 => "figure2",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Self::Simulate => &["horizon", "dt"],
            Self::CapsizeTime => &["horizon", "dt", "n_samples", "sampler"],
            Self::Committor | Self::Minact => &[],
            Self::McRate | Self::Figure2 => &["total_time", "dt"],
        }
    }

    /// Pipelines that work on the `(θ, v)` plane only.
    fn planar(self) -> bool {
        matches!(self, Self::Committor | Self::McRate | Self::Figure2)
    }
}

/// Ornstein–Uhlenbeck forcing `ż = A z + ε ξ` with covariance `C`, whose first
/// coordinate drives the roll acceleration. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub k: usize,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    #[serde(default)]
    pub model: RollModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default = "default_region_a")]
    pub region_a: RegionSpec,
    #[serde(default = "default_region_b")]
    pub region_b: RegionSpec,
    #[serde(default)]
    pub grid: Grid2D,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    /// Noise levels for `mc-rate`; defaults to the model's `epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// Trajectory length for transition sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_time: Option<f64>,
    /// Start of the `simulate` path; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<InitialSampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Duration>,
    /// End of the minimum-action path; defaults to the starboard saddle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_state: Option<Vec<f64>>,
    /// Reactive segments kept for the histogram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_segments: Option<usize>,
}

fn default_region_a() -> RegionSpec {
    RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).expect("default A")
}

fn default_region_b() -> RegionSpec {
    RegionSpec::both_sides(RegionLabel::B, 1.5).expect("default B")
}

impl ExperimentConfig {
    /// All defaults for `pipeline`; required fields are left unset.
    pub fn new(pipeline: Pipeline) -> Self {
        Self {
            pipeline,
            model: RollModelParams::default(),
            filter: None,
            region_a: default_region_a(),
            region_b: default_region_b(),
            grid: Grid2D::default(),
            seed: 0,
            output_dir: None,
            dt: None,
            horizon: None,
            n_samples: None,
            n_points: None,
            epsilons: None,
            total_time: None,
            initial_state: None,
            sampler: None,
            duration: None,
            end_state: None,
            max_segments: None,
        }
    }

    /// Strict parse followed by [`validate`](Self::validate). Errors name the
    /// offending key.
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                RunError::Config(e.into_inner().to_string())
            } else {
                RunError::Config(format!("{path}: {}", e.into_inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialize")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        for key in self.pipeline.required() {
            if !self.has(key) {
                return Err(RunError::Config(format!("pipeline {} requires `{key}`", self.pipeline.name())));
            }
        }
        if self.pipeline.planar() && self.filter.is_some() {
            return Err(RunError::Config(format!("`filter`: pipeline {} needs the planar model", self.pipeline.name())));
        }
        if self.region_a.label != RegionLabel::A {
            return Err(RunError::Config("`region_a.label` must be \"A\"".into()));
        }
        if self.region_b.label != RegionLabel::B {
            return Err(RunError::Config("`region_b.label` must be \"B\"".into()));
        }
        if let Some(eps) = &self.epsilons {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(RunError::Config("`epsilons` must be a nonempty list of positive numbers".into()));
            }
        }
        Ok(())
    }

    fn has(&self, key: &str) -> bool {
        match key {
            "horizon" => self.horizon.is_some(),
            "dt" => self.dt.is_some(),
            "n_samples" => self.n_samples.is_some(),
            "sampler" => self.sampler.is_some(),
            "total_time" => self.total_time.is_some(),
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(r#"{"pipeline": "committor"}"#).unwrap();
        assert_eq!(c, ExperimentConfig::new(Pipeline::Committor));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::from_json(r#"{"pipeline": "committor", "horizn": 3}"#).unwrap_err();
        assert!(e.to_string().contains("horizn"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"pipeline": "committor", "model": {"omega": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("model") && e.to_string().contains("omega"), "{e}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let e = ExperimentConfig::from_json(r#"{"pipeline": "simulate", "dt": 0.01}"#).unwrap_err();
        assert!(e.to_string().contains("`horizon`"), "{e}");
    }

    #[test]
    fn filter_rejected_for_planar_pipelines() {
        let text = r#"{"pipeline": "committor", "filter": {"k": 1, "a": [-1], "c": [1], "epsilon": 0.1}}"#;
        assert!(ExperimentConfig::from_json(text).unwrap_err().to_string().contains("filter"));
    }
}
