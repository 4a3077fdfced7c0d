//! State and action representations.
//!
//! States are either subsets of the clinical feature battery (all of it, the
//! clinician-curated TIDE view, or a model-selected subset) or an 8-dimensional
//! Gaussian random projection of the raw two-week CGM window, which stands in
//! for a learned black-box embedding.

pub mod actions;
mod select;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClinicalFeatures, Feature};
use crate::rng::{self, domain};
use crate::sim::{LoggedPanel, LoggedRow, WINDOW_DAYS, WINDOW_SLOTS};

pub use actions::{
    action_representation_clinical, clinical_class, fit_kmeans, ActionEncoder, ActionRep,
    ActionScheme, KMeansModel,
};
pub use select::{select_state_features, DEFAULT_TOP_K};

pub const BLACKBOX_DIMS: usize = 8;
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    Full,
    MlSubset,
    Tide,
    Blackbox,
}

impl StateMode {
    pub const ALL: [StateMode; 4] = [
        StateMode::Full,
        StateMode::MlSubset,
        StateMode::Tide,
        StateMode::Blackbox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateMode::Full => "full",
            StateMode::MlSubset => "ml_subset",
            StateMode::Tide => "tide",
            StateMode::Blackbox => "blackbox",
        }
    }
}

impl fmt::Display for StateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown state mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRep {
    pub mode: StateMode,
    pub feature_names: Vec<String>,
    pub vector: Vec<f64>,
}

/// Seeded Gaussian projection `ℝ^4032 → ℝ^8`, entries `N(0, 1/4032)`.
/// Only the seed is serialised; the matrix is regenerated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProjectionSeed", into = "ProjectionSeed")]
pub struct Projection {
    pub seed: u64,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionSeed {
    seed: u64,
    input_dim: usize,
    output_dims: usize,
}

impl From<ProjectionSeed> for Projection {
    fn from(s: ProjectionSeed) -> Self {
        Projection::new(s.seed)
    }
}

impl From<Projection> for ProjectionSeed {
    fn from(p: Projection) -> Self {
        ProjectionSeed {
            seed: p.seed,
            input_dim: WINDOW_SLOTS,
            output_dims: BLACKBOX_DIMS,
        }
    }
}

impl Projection {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, domain::PROJECTION, 0);
        let scale = 1.0 / (WINDOW_SLOTS as f64).sqrt();
        let matrix = (0..BLACKBOX_DIMS * WINDOW_SLOTS)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * scale
            })
            .collect();
        Self { seed, matrix }
    }

    /// Projects a raw window (0 = missing), imputing missing slots with the
    /// window mean of the present readings.
    pub fn apply(&self, window: &[u16]) -> Result<Vec<f64>> {
        if window.len() != WINDOW_SLOTS {
            return Err(Error::InconsistentInput(format!(
                "window has {} slots, expected {WINDOW_SLOTS}",
                window.len()
            )));
        }
        let (sum, count) = window
            .iter()
            .filter(|&&v| v != 0)
            .fold((0.0, 0usize), |(s, c), &v| (s + f64::from(v), c + 1));
        if count == 0 {
            return Err(Error::UndefinedFeature("blackbox window"));
        }
        let mean = sum / count as f64;
        let filled: Vec<f64> = window
            .iter()
            .map(|&v| if v == 0 { mean } else { f64::from(v) })
            .collect();
        Ok(self
            .matrix
            .chunks_exact(WINDOW_SLOTS)
            .map(|row| row.iter().zip(&filled).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Fitted state map `γ`: the mode plus whatever artifact it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub mode: StateMode,
    /// Selected features for the non-projection modes.
    pub features: Vec<Feature>,
    pub projection: Option<Projection>,
}

impl StateEncoder {
    pub fn full() -> Self {
        Self {
            mode: StateMode::Full,
            features: Feature::ALL.to_vec(),
            projection: None,
        }
    }

    pub fn tide() -> Self {
        Self {
            mode: StateMode::Tide,
            features: Feature::TIDE.to_vec(),
            projection: None,
        }
    }

    pub fn ml_subset(features: Vec<Feature>) -> Self {
        Self {
            mode: StateMode::MlSubset,
            features,
            projection: None,
        }
    }

    pub fn blackbox(seed: u64) -> Self {
        Self {
            mode: StateMode::Blackbox,
            features: Vec::new(),
            projection: Some(Projection::new(seed)),
        }
    }

    /// Builds the encoder for `mode`, selecting features or drawing the
    /// projection from the training rows and seed where needed.
    pub fn fit(mode: StateMode, train_rows: &[LoggedRow], top_k: usize, seed: u64) -> Result<Self> {
        Ok(match mode {
            StateMode::Full => Self::full(),
            StateMode::Tide => Self::tide(),
            StateMode::MlSubset => Self::ml_subset(select_state_features(train_rows, top_k, seed)?),
            StateMode::Blackbox => Self::blackbox(seed),
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        match self.mode {
            StateMode::Blackbox => (0..BLACKBOX_DIMS)
                .map(|i| format!("blackbox_{i}"))
                .collect(),
            _ => self.features.iter().map(|f| f.name().to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            StateMode::Blackbox => BLACKBOX_DIMS,
            _ => self.features.len(),
        }
    }

    pub fn encode(&self, features: &ClinicalFeatures, window: Option<&[u16]>) -> Result<StateRep> {
        state_representation(features, window, self)
    }

    /// Encodes a logged row, reading the window from the patient's trace.
    pub fn encode_row(&self, panel: &LoggedPanel, row: &LoggedRow) -> Result<StateRep> {
        let window = match self.mode {
            StateMode::Blackbox => {
                let patient = panel.patient(row.patient_id).ok_or_else(|| {
                    Error::InconsistentInput(format!("unknown patient {}", row.patient_id))
                })?;
                Some(patient.trace.days_slice(row.day as usize, WINDOW_DAYS)?)
            }
            _ => None,
        };
        self.encode(&row.features, window)
    }

    /// State matrix of many rows, one row per entry of `rows`.
    pub fn encode_matrix(&self, panel: &LoggedPanel, rows: &[&LoggedRow]) -> Result<Array2<f64>> {
        let d = self.dim();
        let vectors = rows
            .par_iter()
            .map(|r| self.encode_row(panel, r).map(|s| s.vector))
            .collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = vectors.into_iter().flatten().collect();
        Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InconsistentInput(e.to_string()))
    }
}

/// State representation of one row under a fitted encoder. The projection mode
/// needs the raw window; the other modes read only the features.
pub fn state_representation(
    features: &ClinicalFeatures,
    window: Option<&[u16]>,
    encoder: &StateEncoder,
) -> Result<StateRep> {
    let vector = match encoder.mode {
        StateMode::Blackbox => {
            let p = encoder
                .projection
                .as_ref()
                .ok_or_else(|| Error::MissingArtifact("blackbox projection".into()))?;
            let w = window.ok_or_else(|| Error::MissingArtifact("trace window".into()))?;
            p.apply(w)?
        }
        StateMode::MlSubset if encoder.features.is_empty() => {
            return Err(Error::MissingArtifact("selected feature subset".into()));
        }
        _ => encoder.features.iter().map(|&f| features.get(f)).collect(),
    };
    Ok(StateRep {
        mode: encoder.mode,
        feature_names: encoder.feature_names(),
        vector,
    })
}

/// Serialised representation artifacts of one run cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationArtifact {
    pub version: u32,
    pub seed: u64,
    pub state: StateEncoder,
    pub action: ActionEncoder,
}

impl RepresentationArtifact {
    pub fn new(seed: u64, state: StateEncoder, action: ActionEncoder) -> Self {
        Self {
            version: ARTIFACT_VERSION,
            seed,
            state,
            action,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_COUNT;

    fn constant_features() -> ClinicalFeatures {
        let mut f = ClinicalFeatures::from_values(vec![0.0; FEATURE_COUNT]).unwrap();
        f.set(Feature::InRange7dr, 1.0);
        f.set(Feature::G7dr, 120.0);
        f
    }

    #[test]
    fn tide_mode_lists_the_clinician_view() {
        let s = StateEncoder::tide()
            .encode(&constant_features(), None)
            .unwrap();
        for name in [
            "very_low_7dr",
            "low_7dr",
            "in_range_7dr",
            "g_7dr",
            "using_pump",
            "in_range_7dr_7d_delta",
            "large_tir_drop",
            "low_tir",
            "lows",
            "very_lows",
        ] {
            assert!(s.feature_names.iter().any(|n| n == name), "{name}");
        }
        assert_eq!(s.vector.len(), s.feature_names.len());
    }

    #[test]
    fn full_mode_passes_features_through() {
        let s = StateEncoder::full()
            .encode(&constant_features(), None)
            .unwrap();
        let i = s
            .feature_names
            .iter()
            .position(|n| n == "in_range_7dr")
            .unwrap();
        assert_eq!(s.vector[i], 1.0);
        assert_eq!(s.vector.len(), FEATURE_COUNT);
    }

    #[test]
    fn blackbox_is_eight_dims_and_needs_artifacts() {
        let enc = StateEncoder::blackbox(4);
        let window = vec![120u16; WINDOW_SLOTS];
        let a = enc.encode(&constant_features(), Some(&window)).unwrap();
        assert_eq!(a.vector.len(), BLACKBOX_DIMS);
        let b = enc.encode(&constant_features(), Some(&window)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            enc.encode(&constant_features(), None),
            Err(Error::MissingArtifact(_))
        ));
        let bare = StateEncoder {
            projection: None,
            ..enc.clone()
        };
        assert!(bare.encode(&constant_features(), Some(&window)).is_err());
        let empty = StateEncoder::ml_subset(Vec::new());
        assert!(matches!(
            empty.encode(&constant_features(), None),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn missing_slots_take_the_window_mean() {
        let enc = StateEncoder::blackbox(1);
        let mut window = vec![100u16; WINDOW_SLOTS];
        window[10] = 0;
        let full = vec![100u16; WINDOW_SLOTS];
        let f = constant_features();
        assert_eq!(
            enc.encode(&f, Some(&window)).unwrap(),
            enc.encode(&f, Some(&full)).unwrap()
        );
    }

    #[test]
    fn projection_artifact_round_trips() {
        let art =
            RepresentationArtifact::new(3, StateEncoder::blackbox(3), ActionEncoder::ClinicalRules);
        let s = serde_json::to_string(&art).unwrap();
        assert!(s.len() < 1000);
        let back: RepresentationArtifact = serde_json::from_str(&s).unwrap();
        assert_eq!(back, art);
    }
}
