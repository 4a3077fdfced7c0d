use serde::{Deserialize, Serialize};

use super::action::ActionClass;
use crate::error::{Error, Result};
use crate::features::{ClinicalFeatures, Feature};

/// Ground-truth treatment-effect function of the simulator, in TIR-fraction units.
///
/// - highs_only: `highs · high_7dr · (1 + 0.5·(1 − pump)) · responsiveness`
/// - lows_only: `lows · low_7dr · responsiveness`
/// - highs_and_lows: `combined · (highs_only + lows_only)`
/// - other: the constant `other`
/// - control: exactly 0
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleCate {
    pub highs: f64,
    pub lows: f64,
    pub other: f64,
    pub combined: f64,
    /// Coefficient of the regression-to-the-mean term in the control response.
    pub regression_to_mean: f64,
}

impl Default for OracleCate {
    fn default() -> Self {
        Self {
            highs: 0.12,
            lows: 0.06,
            other: 0.005,
            combined: 0.8,
            regression_to_mean: 0.3,
        }
    }
}

/// The state inputs the effect formula reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectInputs {
    pub high_7dr: f64,
    pub low_7dr: f64,
    pub using_pump: bool,
    pub responsiveness: f64,
}

impl EffectInputs {
    pub fn new(features: &ClinicalFeatures, responsiveness: f64) -> Self {
        Self {
            high_7dr: features.get(Feature::High7dr),
            low_7dr: features.get(Feature::Low7dr),
            using_pump: features.get(Feature::UsingPump) > 0.5,
            responsiveness,
        }
    }
}

impl OracleCate {
    pub fn effect(&self, s: &EffectInputs, class: ActionClass) -> f64 {
        let highs = || {
            let pump_boost = if s.using_pump { 1.0 } else { 1.5 };
            self.highs * s.high_7dr * pump_boost * s.responsiveness
        };
        let lows = || self.lows * s.low_7dr * s.responsiveness;
        match class {
            ActionClass::Control => 0.0,
            ActionClass::HighsOnly => highs(),
            ActionClass::LowsOnly => lows(),
            ActionClass::HighsAndLows => self.combined * (highs() + lows()),
            ActionClass::Other => self.other,
        }
    }

    /// Effects for every class, indexed by class id.
    pub fn effects(&self, s: &EffectInputs) -> [f64; ActionClass::COUNT] {
        ActionClass::ALL.map(|c| self.effect(s, c))
    }

    /// Expected reward under control: `−regression_to_mean · in_range_7dr_7d_delta`.
    pub fn control_response(&self, features: &ClinicalFeatures) -> f64 {
        -self.regression_to_mean * features.get(Feature::InRange7drDelta)
    }

    /// Expected reward `ρ(s, a) = control response + effect`.
    pub fn expected_reward(
        &self,
        features: &ClinicalFeatures,
        responsiveness: f64,
        class: ActionClass,
    ) -> f64 {
        self.control_response(features)
            + self.effect(&EffectInputs::new(features, responsiveness), class)
    }
}

/// True CATE of `action_class` (a class id) for a patient with the given
/// features and latent responsiveness.
pub fn true_cate(
    oracle: &OracleCate,
    features: &ClinicalFeatures,
    responsiveness: f64,
    action_class: usize,
) -> Result<f64> {
    let class = ActionClass::from_id(action_class)?;
    if !(0.0..=1.0).contains(&responsiveness) {
        return Err(Error::Domain(format!(
            "responsiveness {responsiveness} outside [0, 1]"
        )));
    }
    Ok(oracle.effect(&EffectInputs::new(features, responsiveness), class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_COUNT;

    fn features(pairs: &[(Feature, f64)]) -> ClinicalFeatures {
        let mut f = ClinicalFeatures::from_values(vec![0.0; FEATURE_COUNT]).unwrap();
        for &(k, v) in pairs {
            f.set(k, v);
        }
        f
    }

    #[test]
    fn control_is_zero() {
        let o = OracleCate::default();
        for r in [0.0, 0.3, 1.0] {
            let f = features(&[(Feature::High7dr, 0.7), (Feature::Low7dr, 0.2)]);
            assert_eq!(true_cate(&o, &f, r, 0).unwrap(), 0.0);
        }
    }

    #[test]
    fn no_pump_beats_pump_for_highs() {
        let o = OracleCate::default();
        let no_pump = features(&[(Feature::High7dr, 0.5), (Feature::UsingPump, 0.0)]);
        let pump = features(&[(Feature::High7dr, 0.5), (Feature::UsingPump, 1.0)]);
        let a = true_cate(&o, &no_pump, 0.6, ActionClass::HighsOnly.id()).unwrap();
        let b = true_cate(&o, &pump, 0.6, ActionClass::HighsOnly.id()).unwrap();
        assert!(a > b);
        assert!((a - 0.12 * 0.5 * 1.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn more_lows_more_effect() {
        let o = OracleCate::default();
        let lo = features(&[(Feature::Low7dr, 0.10)]);
        let none = features(&[(Feature::Low7dr, 0.0)]);
        let id = ActionClass::LowsOnly.id();
        assert!(true_cate(&o, &lo, 0.5, id).unwrap() > true_cate(&o, &none, 0.5, id).unwrap());
    }

    #[test]
    fn unknown_class_is_domain_error() {
        let o = OracleCate::default();
        assert!(matches!(
            true_cate(&o, &features(&[]), 0.5, 9),
            Err(Error::Domain(_))
        ));
    }
}
