use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Dimension of the synthetic message embedding.
pub const EMBEDDING_DIM: usize = 16;
/// Number of latent writing styles the embedding generator mixes in.
pub const WRITING_STYLES: usize = 4;

/// Clinical action classes. Discriminants are the class ids used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Control = 0,
    HighsAndLows = 1,
    HighsOnly = 2,
    LowsOnly = 3,
    Other = 4,
}

impl ActionClass {
    pub const ALL: [ActionClass; 5] = [
        ActionClass::Control,
        ActionClass::HighsAndLows,
        ActionClass::HighsOnly,
        ActionClass::LowsOnly,
        ActionClass::Other,
    ];
    pub const COUNT: usize = 5;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown action class id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::Control => "control",
            ActionClass::HighsAndLows => "highs_and_lows",
            ActionClass::HighsOnly => "highs_only",
            ActionClass::LowsOnly => "lows_only",
            ActionClass::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Domain(format!("unknown action class {name}")))
    }
}

/// The eleven boolean message labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageLabels {
    pub recommends_insulin_dose_change: bool,
    pub recommends_changing_basal_or_long_acting_insulin: bool,
    pub recommends_more_correction_doses: bool,
    pub recommends_changing_carb_ratio: bool,
    pub reminds_patient_to_bolus: bool,
    pub recommends_insulin_change_at_night: bool,
    pub recommends_insulin_change_during_the_day: bool,
    pub recommendations_target_high_glucose_or_low_time_in_range: bool,
    pub recommendations_target_low_glucose: bool,
    pub mentions_recent_visit: bool,
    pub mentions_patient_schedule: bool,
}

impl MessageLabels {
    pub const NAMES: [&'static str; 11] = [
        "recommends_insulin_dose_change",
        "recommends_changing_basal_or_long_acting_insulin",
        "recommends_more_correction_doses",
        "recommends_changing_carb_ratio",
        "reminds_patient_to_bolus",
        "recommends_insulin_change_at_night",
        "recommends_insulin_change_during_the_day",
        "recommendations_target_high_glucose_or_low_time_in_range",
        "recommendations_target_low_glucose",
        "mentions_recent_visit",
        "mentions_patient_schedule",
    ];

    pub fn to_array(self) -> [bool; 11] {
        [
            self.recommends_insulin_dose_change,
            self.recommends_changing_basal_or_long_acting_insulin,
            self.recommends_more_correction_doses,
            self.recommends_changing_carb_ratio,
            self.reminds_patient_to_bolus,
            self.recommends_insulin_change_at_night,
            self.recommends_insulin_change_during_the_day,
            self.recommendations_target_high_glucose_or_low_time_in_range,
            self.recommendations_target_low_glucose,
            self.mentions_recent_visit,
            self.mentions_patient_schedule,
        ]
    }

    pub fn from_array(a: [bool; 11]) -> Self {
        Self {
            recommends_insulin_dose_change: a[0],
            recommends_changing_basal_or_long_acting_insulin: a[1],
            recommends_more_correction_doses: a[2],
            recommends_changing_carb_ratio: a[3],
            reminds_patient_to_bolus: a[4],
            recommends_insulin_change_at_night: a[5],
            recommends_insulin_change_during_the_day: a[6],
            recommendations_target_high_glucose_or_low_time_in_range: a[7],
            recommendations_target_low_glucose: a[8],
            mentions_recent_visit: a[9],
            mentions_patient_schedule: a[10],
        }
    }

    /// Whether any of the labels that mark a message as treating highs is set.
    pub fn treats_highs(&self) -> bool {
        self.recommendations_target_high_glucose_or_low_time_in_range
            || self.recommends_more_correction_doses
            || self.reminds_patient_to_bolus
    }
}

/// A logged action: clinical class, its labels and a synthetic text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    pub class_label: ActionClass,
    pub labels: MessageLabels,
    pub embedding: [f32; EMBEDDING_DIM],
}

impl RawAction {
    pub fn control() -> Self {
        Self {
            class_label: ActionClass::Control,
            labels: MessageLabels::default(),
            embedding: [0.0; EMBEDDING_DIM],
        }
    }

    pub fn is_message(&self) -> bool {
        self.class_label != ActionClass::Control
    }
}

/// Draws labels consistent with `class` under the clinical grouping rules.
pub fn sample_labels<R: Rng>(class: ActionClass, rng: &mut R) -> MessageLabels {
    let mut l = MessageLabels::default();
    if class == ActionClass::Control {
        return l;
    }
    let treats_highs = matches!(class, ActionClass::HighsAndLows | ActionClass::HighsOnly);
    if treats_highs {
        l.recommendations_target_high_glucose_or_low_time_in_range = rng.random_bool(0.85);
        l.recommends_more_correction_doses = rng.random_bool(0.3);
        l.reminds_patient_to_bolus = rng.random_bool(0.3);
        if !l.treats_highs() {
            l.recommendations_target_high_glucose_or_low_time_in_range = true;
        }
    }
    l.recommendations_target_low_glucose =
        matches!(class, ActionClass::HighsAndLows | ActionClass::LowsOnly);
    let clinical = class != ActionClass::Other;
    l.recommends_insulin_dose_change = rng.random_bool(if clinical { 0.8 } else { 0.25 });
    if l.recommends_insulin_dose_change {
        l.recommends_changing_basal_or_long_acting_insulin = rng.random_bool(0.45);
        l.recommends_changing_carb_ratio = rng.random_bool(0.35);
    }
    l.recommends_insulin_change_at_night = rng.random_bool(0.35);
    l.recommends_insulin_change_during_the_day = rng.random_bool(0.3);
    l.mentions_recent_visit = rng.random_bool(0.1);
    l.mentions_patient_schedule = rng.random_bool(0.1);
    l
}

/// Fixed generator geometry: one centre per writing style and a weaker
/// direction per clinical class. Embeddings are dominated by style.
#[derive(Debug, Clone)]
pub struct EmbeddingGenerator {
    style_centres: Vec<[f64; EMBEDDING_DIM]>,
    class_directions: Vec<[f64; EMBEDDING_DIM]>,
}

const STYLE_SCALE: f64 = 2.5;
const CLASS_SCALE: f64 = 0.6;
const GENERATOR_SEED: u64 = 0x5EED_E4B3;

impl Default for EmbeddingGenerator {
    fn default() -> Self {
        let mut rng = rng::stream(GENERATOR_SEED, domain::EMBEDDING, 0);
        let mut draw = |scale: f64| {
            let mut v = [0.0; EMBEDDING_DIM];
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = scale * z;
            }
            v
        };
        let style_centres = (0..WRITING_STYLES).map(|_| draw(STYLE_SCALE)).collect();
        let class_directions = (0..ActionClass::COUNT).map(|_| draw(CLASS_SCALE)).collect();
        Self {
            style_centres,
            class_directions,
        }
    }
}

impl EmbeddingGenerator {
    pub fn sample<R: Rng>(&self, class: ActionClass, rng: &mut R) -> [f32; EMBEDDING_DIM] {
        if class == ActionClass::Control {
            return [0.0; EMBEDDING_DIM];
        }
        let style = rng.random_range(0..WRITING_STYLES);
        let mut out = [0.0f32; EMBEDDING_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *o = (self.style_centres[style][j] + self.class_directions[class.id()][j] + z) as f32;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ids_round_trip() {
        for c in ActionClass::ALL {
            assert_eq!(ActionClass::from_id(c.id()).unwrap(), c);
            assert_eq!(ActionClass::from_name(c.name()).unwrap(), c);
        }
        assert!(ActionClass::from_id(5).is_err());
    }

    #[test]
    fn control_embedding_is_zero() {
        let g = EmbeddingGenerator::default();
        let mut r = rng::stream(1, domain::EMBEDDING, 1);
        assert_eq!(g.sample(ActionClass::Control, &mut r), [0.0; EMBEDDING_DIM]);
        assert_ne!(g.sample(ActionClass::Other, &mut r), [0.0; EMBEDDING_DIM]);
    }
}
