//! Synthetic remote-monitoring cohort with a confounded logging policy.
//!
//! Each patient gets a CGM trace from a mean-reverting walk around their
//! baseline glucose, weekly review days from day 14 on, a clinician logging
//! policy that depends only on the clinician-visible features, and rewards
//! drawn from a known outcome model. Every random draw for a patient comes
//! from streams keyed by `(seed, patient_id)`, so a patient's rows do not
//! depend on who else is in the cohort.

pub mod action;
pub mod export;
pub mod oracle;
pub mod trace;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    compute_window_features, ClinicalFeatures, Demographics, Feature, Population,
};
use crate::policy::Assignment;
use crate::rng::{self, domain};

pub use action::{ActionClass, EmbeddingGenerator, MessageLabels, RawAction, EMBEDDING_DIM};
pub use oracle::{true_cate, EffectInputs, OracleCate};
pub use trace::{CgmTrace, SLOTS_PER_DAY, WINDOW_DAYS, WINDOW_SLOTS};

/// Days between clinician reviews.
pub const REVIEW_INTERVAL_DAYS: usize = 7;

/// Logit of one message class: `intercept + strength · (offset + Σ w·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLogit {
    pub intercept: f64,
    pub offset: f64,
    pub weights: Vec<(Feature, f64)>,
}

/// Multinomial-logit clinician policy over the message classes, with control
/// as the reference class. Weights only reference clinician-visible features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingPolicy {
    /// Logits for highs_and_lows, highs_only, lows_only, other.
    pub logits: [ClassLogit; 4],
}

impl Default for LoggingPolicy {
    fn default() -> Self {
        use Feature as F;
        Self {
            logits: [
                ClassLogit {
                    intercept: -1.0,
                    offset: 0.55,
                    weights: vec![
                        (F::LargeTirDrop, 0.5),
                        (F::InRange7drDelta, -15.0),
                        (F::Lows, 0.6),
                        (F::InRange7dr, -1.0),
                    ],
                },
                ClassLogit {
                    intercept: -0.4,
                    offset: 0.825,
                    weights: vec![
                        (F::LargeTirDrop, 0.7),
                        (F::InRange7drDelta, -15.0),
                        (F::LowTir, 0.3),
                        (F::InRange7dr, -1.5),
                    ],
                },
                ClassLogit {
                    intercept: -1.2,
                    offset: -0.2,
                    weights: vec![
                        (F::LargeTirDrop, 0.3),
                        (F::InRange7drDelta, -15.0),
                        (F::Lows, 0.8),
                        (F::VeryLows, 0.4),
                    ],
                },
                ClassLogit {
                    intercept: -1.0,
                    offset: 0.0,
                    weights: vec![(F::LargeTirDrop, 0.3), (F::InRange7drDelta, -15.0)],
                },
            ],
        }
    }
}

impl LoggingPolicy {
    /// Action-class probabilities, floored at `floor` and renormalised.
    pub fn propensities(
        &self,
        features: &ClinicalFeatures,
        strength: f64,
        floor: f64,
    ) -> [f64; ActionClass::COUNT] {
        let mut logits = [0.0; ActionClass::COUNT];
        for (k, l) in self.logits.iter().enumerate() {
            let lin: f64 = l.weights.iter().map(|&(f, w)| w * features.get(f)).sum();
            logits[k + 1] = l.intercept + strength * (l.offset + lin);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = logits.map(|v| (v - max).exp());
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        crate::learners::propensity::clip_and_renormalize(&mut p, floor);
        p
    }
}

/// Simulator configuration. Defaults describe the sampling distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub pump_rate: f64,
    /// Fraction of pump users on automated insulin delivery.
    pub aid_rate_among_pump: f64,
    pub age_range: (f64, f64),
    pub sex_f_rate: f64,
    pub public_insurance_rate: f64,
    pub english_rate: f64,
    /// Weights for pilot, 4T_1, 4T_2 and TIPS enrolment.
    pub population_weights: [f64; 4],
    pub months_since_onset_range: (f64, f64),
    pub mean_glucose_pump: f64,
    pub mean_glucose_no_pump: f64,
    pub mean_glucose_sd: f64,
    /// Stationary sd (mg/dL) of the day-level glucose offset.
    pub level_sd: f64,
    /// Day-to-day autocorrelation of the level offset.
    pub level_persistence: f64,
    /// Range of the within-day fluctuation sd (mg/dL).
    pub volatility_range: (f64, f64),
    /// Per-slot mean-reversion rate of the within-day fluctuation.
    pub fast_reversion: f64,
    pub circadian_amplitude: f64,
    pub missing_rate_range: (f64, f64),
    pub responsiveness_beta: (f64, f64),
    pub reward_noise_sd: f64,
    pub propensity_floor: f64,
    pub oracle: OracleCate,
    pub logging: LoggingPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            pump_rate: 0.7,
            aid_rate_among_pump: 0.5,
            age_range: (8.0, 21.0),
            sex_f_rate: 0.5,
            public_insurance_rate: 0.35,
            english_rate: 0.8,
            population_weights: [0.15, 0.4, 0.25, 0.2],
            months_since_onset_range: (1.0, 60.0),
            mean_glucose_pump: 158.0,
            mean_glucose_no_pump: 158.0,
            mean_glucose_sd: 5.0,
            level_sd: 8.0,
            level_persistence: 0.85,
            volatility_range: (15.0, 110.0),
            fast_reversion: 1.0 / 18.0,
            circadian_amplitude: 12.0,
            missing_rate_range: (0.02, 0.3),
            responsiveness_beta: (8.0, 2.0),
            reward_noise_sd: 0.04,
            propensity_floor: 0.01,
            oracle: OracleCate::default(),
            logging: LoggingPolicy::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("pump_rate", self.pump_rate),
            ("aid_rate_among_pump", self.aid_rate_among_pump),
            ("sex_f_rate", self.sex_f_rate),
            ("public_insurance_rate", self.public_insurance_rate),
            ("english_rate", self.english_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        let (lo, hi) = self.missing_rate_range;
        if !(0.0 <= lo && lo <= hi && hi <= 0.6) {
            return Err(Error::Config(
                "missing_rate_range must lie within [0, 0.6]".into(),
            ));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor * 5.0 < 1.0) {
            return Err(Error::Config("propensity_floor must be in (0, 0.2)".into()));
        }
        if self.population_weights.iter().any(|w| *w < 0.0)
            || self.population_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "population_weights must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.level_persistence)
            || !(0.0..=1.0).contains(&self.fast_reversion)
        {
            return Err(Error::Config("persistence/reversion out of range".into()));
        }
        Ok(())
    }
}

/// Latent, time-invariant patient attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientLatent {
    pub patient_id: u32,
    pub baseline_mean_glucose: f64,
    pub glucose_volatility: f64,
    pub pump_user: bool,
    pub aid_user: bool,
    /// Age at day 0, in years.
    pub age: f64,
    pub months_since_onset: f64,
    pub sex_f: bool,
    pub public_insurance: bool,
    pub english_primary_language: bool,
    pub population: Population,
    pub missing_rate: f64,
    /// Latent multiplier on every treatment effect.
    pub responsiveness: f64,
}

impl PatientLatent {
    pub fn demographics_on(&self, day: usize, days_since_msg: Option<u32>) -> Demographics {
        let years = day as f64 / 365.25;
        Demographics {
            sex_f: self.sex_f,
            public_insurance: self.public_insurance,
            english_primary_language: self.english_primary_language,
            population: self.population,
            age: self.age + years,
            months_since_onset: self.months_since_onset + years * 12.0,
            using_pump: self.pump_user,
            using_aid: self.aid_user,
            days_since_msg,
        }
    }
}

fn sample_latent(config: &SimConfig, patient_id: u32, seed: u64) -> PatientLatent {
    let mut rng = rng::stream(seed, domain::LATENT, u64::from(patient_id));
    let pump_user = rng.random_bool(config.pump_rate);
    let aid_user = pump_user && rng.random_bool(config.aid_rate_among_pump);
    let age = rng.random_range(config.age_range.0..=config.age_range.1);
    let months_since_onset =
        rng.random_range(config.months_since_onset_range.0..=config.months_since_onset_range.1);
    let sex_f = rng.random_bool(config.sex_f_rate);
    let public_insurance = rng.random_bool(config.public_insurance_rate);
    let english_primary_language = rng.random_bool(config.english_rate);
    let total: f64 = config.population_weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut population = Population::Tips;
    for (p, w) in Population::ALL.into_iter().zip(config.population_weights) {
        if u < w {
            population = p;
            break;
        }
        u -= w;
    }
    let centre = if pump_user {
        config.mean_glucose_pump
    } else {
        config.mean_glucose_no_pump
    };
    let baseline_mean_glucose = Normal::new(centre, config.mean_glucose_sd)
        .expect("finite sd")
        .sample(&mut rng)
        .clamp(80.0, 350.0);
    let glucose_volatility =
        rng.random_range(config.volatility_range.0..=config.volatility_range.1);
    let missing_rate = rng.random_range(config.missing_rate_range.0..=config.missing_rate_range.1);
    let (a, b) = config.responsiveness_beta;
    let responsiveness = Beta::new(a, b).expect("positive shape").sample(&mut rng);
    PatientLatent {
        patient_id,
        baseline_mean_glucose,
        glucose_volatility,
        pump_user,
        aid_user,
        age,
        months_since_onset,
        sex_f,
        public_insurance,
        english_primary_language,
        population,
        missing_rate,
        responsiveness,
    }
}

/// Samples `n` patients with ids `0..n` from the default superpopulation.
pub fn sample_cohort(n: usize, seed: u64) -> Vec<PatientLatent> {
    Simulator::default().sample_cohort(n, seed)
}

/// Simulates a logged panel with the default simulator configuration.
pub fn simulate_panel(
    cohort: &[PatientLatent],
    days: usize,
    confounding_strength: f64,
    seed: u64,
) -> Result<LoggedPanel> {
    Simulator::default().simulate_panel(cohort, days, confounding_strength, seed)
}

/// Hidden ground truth attached to one logged row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub propensities: [f64; ActionClass::COUNT],
    pub effects: [f64; ActionClass::COUNT],
    pub control_response: f64,
    pub responsiveness: f64,
}

impl OracleRow {
    pub fn expected_reward(&self, class: usize) -> f64 {
        self.control_response + self.effects[class]
    }
}

/// One patient-day decision record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRow {
    pub patient_id: u32,
    pub day: u32,
    pub features: ClinicalFeatures,
    pub action: RawAction,
    /// Change in time-in-range fraction over the following week.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub latent: PatientLatent,
    pub trace: CgmTrace,
}

/// Logged rows plus each patient's full CGM trace. The oracle block is kept
/// apart from the rows and is only reachable through [`LoggedPanel::oracle`].
#[derive(Debug, Clone)]
pub struct LoggedPanel {
    pub days: usize,
    pub confounding_strength: f64,
    pub seed: u64,
    patients: Vec<PatientRecord>,
    patient_index: HashMap<u32, usize>,
    rows: Vec<LoggedRow>,
    row_index: HashMap<(u32, u32), usize>,
    oracle: Option<Vec<OracleRow>>,
    oracle_cate: OracleCate,
}

impl LoggedPanel {
    pub fn new(
        days: usize,
        confounding_strength: f64,
        seed: u64,
        patients: Vec<PatientRecord>,
        rows: Vec<LoggedRow>,
        oracle: Option<Vec<OracleRow>>,
        oracle_cate: OracleCate,
    ) -> Result<Self> {
        if let Some(o) = &oracle {
            if o.len() != rows.len() {
                return Err(Error::InconsistentInput(
                    "oracle block length differs from row count".into(),
                ));
            }
        }
        let patient_index = patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.latent.patient_id, i))
            .collect();
        let row_index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.patient_id, r.day), i))
            .collect();
        Ok(Self {
            days,
            confounding_strength,
            seed,
            patients,
            patient_index,
            rows,
            row_index,
            oracle,
            oracle_cate,
        })
    }

    pub fn rows(&self) -> &[LoggedRow] {
        &self.rows
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn patient(&self, patient_id: u32) -> Option<&PatientRecord> {
        self.patient_index
            .get(&patient_id)
            .map(|&i| &self.patients[i])
    }

    pub fn row_position(&self, patient_id: u32, day: u32) -> Option<usize> {
        self.row_index.get(&(patient_id, day)).copied()
    }

    pub fn oracle(&self) -> Result<&[OracleRow]> {
        self.oracle.as_deref().ok_or(Error::MissingOracle)
    }

    pub fn oracle_cate(&self) -> &OracleCate {
        &self.oracle_cate
    }

    /// A copy without the oracle block, as an estimator would see real data.
    pub fn without_oracle(&self) -> LoggedPanel {
        let mut p = self.clone();
        p.oracle = None;
        p
    }

    pub fn patient_ids(&self) -> Vec<u32> {
        self.patients.iter().map(|p| p.latent.patient_id).collect()
    }

    /// Sorted distinct decision days.
    pub fn decision_days(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.rows.iter().map(|r| r.day).collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

/// Simulator with an explicit configuration.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    pub config: SimConfig,
    embeddings: EmbeddingGenerator,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            embeddings: EmbeddingGenerator::default(),
        })
    }

    pub fn embeddings(&self) -> &EmbeddingGenerator {
        &self.embeddings
    }

    pub fn sample_cohort(&self, n: usize, seed: u64) -> Vec<PatientLatent> {
        (0..n as u32)
            .map(|id| sample_latent(&self.config, id, seed))
            .collect()
    }

    /// Generates the full CGM trace of a patient over `days` days.
    pub fn generate_trace(&self, latent: &PatientLatent, days: usize, seed: u64) -> CgmTrace {
        let c = &self.config;
        let mut rng = rng::stream(seed, domain::TRACE, u64::from(latent.patient_id));
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let phi = c.level_persistence;
        let level_innov = c.level_sd * (1.0 - phi * phi).sqrt();
        let keep = 1.0 - c.fast_reversion;
        let fast_innov = latent.glucose_volatility * (1.0 - keep * keep).sqrt();

        let mut level = c.level_sd * std.sample(&mut rng);
        let mut fast = latent.glucose_volatility * std.sample(&mut rng);
        let mut readings = Vec::with_capacity(days * SLOTS_PER_DAY);
        for day in 0..days {
            if day > 0 {
                level = phi * level + level_innov * std.sample(&mut rng);
            }
            for slot in 0..SLOTS_PER_DAY {
                fast = keep * fast + fast_innov * std.sample(&mut rng);
                let phase = std::f64::consts::TAU * (slot as f64 / SLOTS_PER_DAY as f64 - 0.2);
                let g = latent.baseline_mean_glucose
                    + level
                    + fast
                    + c.circadian_amplitude * phase.sin();
                let missing = rng.random_bool(latent.missing_rate);
                readings.push(if missing {
                    0
                } else {
                    g.clamp(trace::MIN_READING, trace::MAX_READING).round() as u16
                });
            }
        }
        CgmTrace::from_raw(readings)
    }

    fn simulate_patient(
        &self,
        latent: &PatientLatent,
        days: usize,
        strength: f64,
        seed: u64,
    ) -> (PatientRecord, Vec<(LoggedRow, OracleRow)>) {
        let c = &self.config;
        let trace = self.generate_trace(latent, days, seed);
        let mut rng = rng::stream(seed, domain::LOGGING, u64::from(latent.patient_id));
        let noise = Normal::new(0.0, c.reward_noise_sd).expect("finite sd");
        let mut last_message: Option<usize> = None;
        let mut out = Vec::new();

        let mut day = WINDOW_DAYS;
        while day + REVIEW_INTERVAL_DAYS <= days {
            let since = last_message.map(|m| (day - m) as u32);
            let demo = latent.demographics_on(day, since);
            if let Ok(features) = compute_window_features(&trace, &demo, day) {
                let propensities = c
                    .logging
                    .propensities(&features, strength, c.propensity_floor);
                let u: f64 = rng.random();
                let mut class = ActionClass::Other;
                let mut acc = 0.0;
                for k in ActionClass::ALL {
                    acc += propensities[k.id()];
                    if u < acc {
                        class = k;
                        break;
                    }
                }
                let action = if class == ActionClass::Control {
                    RawAction::control()
                } else {
                    RawAction {
                        class_label: class,
                        labels: action::sample_labels(class, &mut rng),
                        embedding: self.embeddings.sample(class, &mut rng),
                    }
                };
                let inputs = EffectInputs::new(&features, latent.responsiveness);
                let effects = c.oracle.effects(&inputs);
                let control_response = c.oracle.control_response(&features);
                let eps: f64 = noise.sample(&mut rng);
                let reward = (control_response + effects[class.id()] + eps).clamp(-1.0, 1.0);
                if action.is_message() {
                    last_message = Some(day);
                }
                out.push((
                    LoggedRow {
                        patient_id: latent.patient_id,
                        day: day as u32,
                        features,
                        action,
                        reward,
                    },
                    OracleRow {
                        propensities,
                        effects,
                        control_response,
                        responsiveness: latent.responsiveness,
                    },
                ));
            }
            day += REVIEW_INTERVAL_DAYS;
        }
        (
            PatientRecord {
                latent: latent.clone(),
                trace,
            },
            out,
        )
    }

    /// Simulates every patient over `days` days with weekly reviews.
    pub fn simulate_panel(
        &self,
        cohort: &[PatientLatent],
        days: usize,
        confounding_strength: f64,
        seed: u64,
    ) -> Result<LoggedPanel> {
        if days < WINDOW_DAYS {
            return Err(Error::WindowTooShort(days));
        }
        if !(confounding_strength >= 0.0 && confounding_strength.is_finite()) {
            return Err(Error::Domain(format!(
                "confounding strength {confounding_strength} must be finite and non-negative"
            )));
        }
        let per_patient: Vec<_> = cohort
            .par_iter()
            .map(|p| self.simulate_patient(p, days, confounding_strength, seed))
            .collect();
        let mut patients = Vec::with_capacity(cohort.len());
        let mut rows = Vec::new();
        let mut oracle = Vec::new();
        for (record, pairs) in per_patient {
            patients.push(record);
            for (r, o) in pairs {
                rows.push(r);
                oracle.push(o);
            }
        }
        LoggedPanel::new(
            days,
            confounding_strength,
            seed,
            patients,
            rows,
            Some(oracle),
            self.config.oracle.clone(),
        )
    }
}

/// Oracle ATT of per-day clinical-class assignments: the mean over days of
/// `(1/K) Σ_i τ(s_it, π_i)`.
pub fn oracle_att(panel: &LoggedPanel, assignments: &[Assignment], k: usize) -> Result<f64> {
    let oracle = panel.oracle()?;
    crate::policy::att_of_assignments(assignments, k, |patient, day, action| {
        let pos = panel.row_position(patient, day).ok_or_else(|| {
            Error::InconsistentInput(format!("no row for patient {patient} on day {day}"))
        })?;
        oracle[pos]
            .effects
            .get(action)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown action class id {action}")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cohort() {
        assert!(sample_cohort(0, 7).is_empty());
    }

    #[test]
    fn cohort_is_deterministic() {
        let a = sample_cohort(281, 7);
        let b = sample_cohort(281, 7);
        assert_eq!(a.len(), 281);
        assert_eq!(a, b);
        assert_ne!(a, sample_cohort(281, 8));
    }

    #[test]
    fn cohort_prefix_is_stable_in_n() {
        let a = sample_cohort(10, 3);
        let b = sample_cohort(50, 3);
        assert_eq!(a[..], b[..10]);
    }

    #[test]
    fn latent_invariants() {
        for p in sample_cohort(2000, 11) {
            assert!((80.0..=350.0).contains(&p.baseline_mean_glucose));
            assert!((0.0..=1.0).contains(&p.responsiveness));
            assert!(!p.aid_user || p.pump_user);
            assert!((8.0..=21.0).contains(&p.age));
        }
    }

    #[test]
    fn pump_fraction_matches_configured_rate() {
        let cohort = sample_cohort(10_000, 1);
        let frac = cohort.iter().filter(|p| p.pump_user).count() as f64 / 10_000.0;
        assert!((frac - 0.7).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn short_panels_are_rejected() {
        let cohort = sample_cohort(2, 1);
        assert!(matches!(
            simulate_panel(&cohort, 13, 1.0, 1),
            Err(Error::WindowTooShort(13))
        ));
        assert!(simulate_panel(&cohort, 14, 1.0, 1)
            .unwrap()
            .rows()
            .is_empty());
    }

    #[test]
    fn logging_propensities_respect_floor() {
        let sim = Simulator::default();
        let cohort = sim.sample_cohort(30, 2);
        let panel = sim.simulate_panel(&cohort, 70, 5.0, 2).unwrap();
        for o in panel.oracle().unwrap() {
            let s: f64 = o.propensities.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(o.propensities.iter().all(|&p| p >= 0.01 - 1e-15));
        }
    }
}
