//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::covariates::{MAX_HISTORY_WEEKS, MIN_HISTORY_WEEKS};
use crate::evaluation::toc::default_grid;
use crate::features::Feature;
use crate::learners::propensity::DEFAULT_CLIP_FLOOR;
use crate::learners::CateMethod;
use crate::representations::{ActionScheme, StateMode, DEFAULT_TOP_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub patients: usize,
    pub days: usize,
    #[serde(default = "default_confounding")]
    pub confounding_strength: f64,
    pub cohort_seed: u64,
    pub panel_seed: u64,
}

fn default_confounding() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    #[serde(default = "all_state_modes")]
    pub state_modes: Vec<StateMode>,
    #[serde(default = "all_action_schemes")]
    pub action_schemes: Vec<ActionScheme>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub seed: u64,
}

fn all_state_modes() -> Vec<StateMode> {
    StateMode::ALL.to_vec()
}

fn all_action_schemes() -> Vec<ActionScheme> {
    ActionScheme::ALL.to_vec()
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "all_methods")]
    pub methods: Vec<CateMethod>,
    #[serde(default = "default_forest_trees")]
    pub forest_trees: usize,
    pub seed: u64,
}

fn all_methods() -> Vec<CateMethod> {
    CateMethod::ALL.to_vec()
}

fn default_forest_trees() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_history")]
    pub history_weeks: usize,
    /// Extra history lengths at which the selected cell is re-evaluated.
    #[serde(default)]
    pub history_sweep: Vec<usize>,
    /// Keep every `day_stride`-th review day of each patient.
    #[serde(default = "default_stride")]
    pub day_stride: usize,
    #[serde(default = "default_min_wear")]
    pub min_wear_fraction: f64,
    #[serde(default = "default_clip_floor")]
    pub clip_floor: f64,
    pub split_seed: u64,
    pub bootstrap_seed: u64,
}

fn default_replicates() -> usize {
    500
}

fn default_level() -> f64 {
    0.95
}

fn default_history() -> usize {
    MIN_HISTORY_WEEKS
}

fn default_stride() -> usize {
    1
}

fn default_min_wear() -> f64 {
    0.2
}

fn default_clip_floor() -> f64 {
    DEFAULT_CLIP_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_slices")]
    pub slice_features: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            slice_features: default_slices(),
        }
    }
}

pub fn default_slices() -> Vec<String> {
    [
        "in_range_7dr",
        "in_range_7dr_7d_delta",
        "g_7dr",
        "using_pump",
    ]
    .map(String::from)
    .to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Worker threads; the `RPMTARGET_WORKERS` variable takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
    pub simulation: SimulationConfig,
    pub representations: RepresentationConfig,
    pub learners: LearnerConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

pub const WORKERS_ENV: &str = "RPMTARGET_WORKERS";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// TOML form with the output directory set to the run directory itself.
    pub fn snapshot_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::from(".");
        c.to_toml()
    }

    /// Hex SHA-256 of the canonical TOML form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = None;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        if s.patients < 3 {
            return Err(Error::Config(
                "simulation.patients must be at least 3".into(),
            ));
        }
        if s.days < 21 {
            return Err(Error::Config("simulation.days must be at least 21".into()));
        }
        if !(s.confounding_strength >= 0.0 && s.confounding_strength.is_finite()) {
            return Err(Error::Config(
                "confounding_strength must be non-negative".into(),
            ));
        }
        let r = &self.representations;
        if r.state_modes.is_empty() || r.action_schemes.is_empty() {
            return Err(Error::Config(
                "at least one state mode and action scheme".into(),
            ));
        }
        if r.top_k == 0 || r.top_k > Feature::ALL.len() {
            return Err(Error::Config(format!(
                "top_k must be in 1..={}",
                Feature::ALL.len()
            )));
        }
        let l = &self.learners;
        if l.methods.is_empty() {
            return Err(Error::Config("at least one CATE method".into()));
        }
        if l.methods.contains(&CateMethod::Ensemble)
            && l.methods
                .iter()
                .filter(|m| **m != CateMethod::Ensemble)
                .count()
                < 2
        {
            return Err(Error::Config(
                "the ensemble needs at least two other methods".into(),
            ));
        }
        if l.forest_trees == 0 {
            return Err(Error::Config("forest_trees must be positive".into()));
        }
        let e = &self.evaluation;
        if e.grid.is_empty() || e.grid.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::Config(
                "evaluation.grid must be non-empty within (0, 1]".into(),
            ));
        }
        if e.bootstrap_replicates == 0 {
            return Err(Error::Config(
                "bootstrap_replicates must be positive".into(),
            ));
        }
        if !(e.level > 0.0 && e.level < 1.0) {
            return Err(Error::Config("level must be in (0, 1)".into()));
        }
        let weeks = MIN_HISTORY_WEEKS..=MAX_HISTORY_WEEKS;
        if !weeks.contains(&e.history_weeks) || e.history_sweep.iter().any(|h| !weeks.contains(h)) {
            return Err(Error::Config("history weeks must be in 2..=4".into()));
        }
        if e.day_stride == 0 {
            return Err(Error::Config("day_stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&e.min_wear_fraction) {
            return Err(Error::Config("min_wear_fraction must be in [0, 1]".into()));
        }
        if !(e.clip_floor > 0.0 && e.clip_floor < 0.2) {
            return Err(Error::Config("clip_floor must be in (0, 0.2)".into()));
        }
        for f in &self.report.slice_features {
            if Feature::from_name(f).is_none() {
                return Err(Error::Config(format!("unknown slice feature {f:?}")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Worker count from the environment, then the config, then 1.
    pub fn worker_count(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::Config(format!(
                    "{WORKERS_ENV} must be a positive integer"
                ))),
            },
            Err(_) => Ok(self.workers.unwrap_or(1)),
        }
    }

    /// A small configuration for smoke runs.
    pub fn minimal(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            workers: None,
            simulation: SimulationConfig {
                patients: 60,
                days: 60,
                confounding_strength: 1.0,
                cohort_seed: 1,
                panel_seed: 2,
            },
            representations: RepresentationConfig {
                state_modes: vec![StateMode::Tide],
                action_schemes: vec![ActionScheme::ClinicalRules],
                top_k: DEFAULT_TOP_K,
                seed: 3,
            },
            learners: LearnerConfig {
                methods: vec![CateMethod::TLearner],
                forest_trees: default_forest_trees(),
                seed: 4,
            },
            evaluation: EvaluationConfig {
                grid: default_grid(),
                bootstrap_replicates: 100,
                level: default_level(),
                history_weeks: MIN_HISTORY_WEEKS,
                history_sweep: Vec::new(),
                day_stride: 1,
                min_wear_fraction: default_min_wear(),
                clip_floor: DEFAULT_CLIP_FLOOR,
                split_seed: 5,
                bootstrap_seed: 6,
            },
            report: ReportConfig::default(),
        }
    }
}
