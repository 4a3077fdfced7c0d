//! Clinical CGM feature battery computed over a two-week window.
//!
//! Windows are aligned to midnight: the 7-day ("7dr") statistics cover days
//! `[d-7, d)` and the prior week used for `*_7d_delta` covers `[d-14, d-7)`.
//! Fractions are taken over present readings; wear fractions over all slots.

mod names;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::trace::{CgmTrace, SLOTS_PER_DAY, WINDOW_DAYS};

pub use names::{Feature, FEATURE_COUNT};

/// Cap applied to `days_since_msg`.
pub const DAYS_SINCE_MSG_CAP: f64 = 60.0;

pub const VERY_LOW_BELOW: u16 = 54;
pub const LOW_BELOW: u16 = 70;
pub const HIGH_ABOVE: u16 = 180;
pub const VERY_HIGH_ABOVE: u16 = 250;

/// Study population a patient was enrolled through (one-hot in the features).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Pilot,
    FourT1,
    FourT2,
    Tips,
}

impl Population {
    pub const ALL: [Population; 4] = [
        Population::Pilot,
        Population::FourT1,
        Population::FourT2,
        Population::Tips,
    ];
}

/// Demographic and device fields as of a decision day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub sex_f: bool,
    pub public_insurance: bool,
    pub english_primary_language: bool,
    pub population: Population,
    pub age: f64,
    pub months_since_onset: f64,
    pub using_pump: bool,
    pub using_aid: bool,
    /// Days since the last message; `None` if never messaged.
    pub days_since_msg: Option<u32>,
}

/// The clinical feature vector, indexed by [`Feature`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalFeatures {
    values: Vec<f64>,
}

impl ClinicalFeatures {
    pub fn get(&self, feature: Feature) -> f64 {
        self.values[feature as usize]
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        self.values[feature as usize] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_COUNT {
            return Err(Error::InconsistentInput(format!(
                "expected {FEATURE_COUNT} feature values, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    /// Recomputes the four risk flags from the stored fractions.
    pub fn refresh_flags(&mut self) {
        let flags = risk_flags(self);
        self.set(Feature::LargeTirDrop, indicator(flags.large_tir_drop));
        self.set(Feature::LowTir, indicator(flags.low_tir));
        self.set(Feature::Lows, indicator(flags.lows));
        self.set(Feature::VeryLows, indicator(flags.very_lows));
    }
}

/// Clinician risk-stratification flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskFlags {
    pub large_tir_drop: bool,
    pub low_tir: bool,
    pub lows: bool,
    pub very_lows: bool,
}

pub fn risk_flags(features: &ClinicalFeatures) -> RiskFlags {
    RiskFlags {
        large_tir_drop: features.get(Feature::InRange7drDelta) < -0.15,
        low_tir: features.get(Feature::InRange7dr) < 0.65,
        lows: features.get(Feature::Low7dr) > 0.04,
        very_lows: features.get(Feature::VeryLow7dr) > 0.01,
    }
}

/// Glycemia Risk Index from range fractions, clipped to `[0, 100]`.
pub fn glycemia_risk_index(very_low: f64, low: f64, high: f64, very_high: f64) -> Result<f64> {
    for (name, v) in [
        ("very_low", very_low),
        ("low", low),
        ("high", high),
        ("very_high", very_high),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InconsistentInput(format!(
                "{name} fraction {v} outside [0, 1]"
            )));
        }
    }
    if low < very_low {
        return Err(Error::InconsistentInput(format!(
            "low fraction {low} below very-low fraction {very_low}"
        )));
    }
    if high < very_high {
        return Err(Error::InconsistentInput(format!(
            "high fraction {high} below very-high fraction {very_high}"
        )));
    }
    let gri = 3.0 * (100.0 * very_low)
        + 2.4 * (100.0 * (low - very_low))
        + 1.6 * (100.0 * very_high)
        + 0.8 * (100.0 * (high - very_high));
    Ok(gri.clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayPart {
    Night,
    Day,
    Neither,
}

fn day_part(slot_in_day: usize) -> DayPart {
    let hour = slot_in_day * 5 / 60;
    if !(5..23).contains(&hour) {
        DayPart::Night
    } else if (6..22).contains(&hour) {
        DayPart::Day
    } else {
        DayPart::Neither
    }
}

/// Raw counts over one slice of slots.
#[derive(Debug, Clone, Copy, Default)]
struct RangeCounts {
    slots: usize,
    present: usize,
    sum: f64,
    very_low: usize,
    low: usize,
    in_range: usize,
    high: usize,
    very_high: usize,
}

impl RangeCounts {
    fn add(&mut self, reading: u16) {
        self.slots += 1;
        if reading == 0 {
            return;
        }
        self.present += 1;
        self.sum += f64::from(reading);
        if reading < VERY_LOW_BELOW {
            self.very_low += 1;
        }
        if reading < LOW_BELOW {
            self.low += 1;
        } else if reading <= HIGH_ABOVE {
            self.in_range += 1;
        } else {
            self.high += 1;
        }
        if reading > VERY_HIGH_ABOVE {
            self.very_high += 1;
        }
    }

    fn merge(self, other: RangeCounts) -> RangeCounts {
        RangeCounts {
            slots: self.slots + other.slots,
            present: self.present + other.present,
            sum: self.sum + other.sum,
            very_low: self.very_low + other.very_low,
            low: self.low + other.low,
            in_range: self.in_range + other.in_range,
            high: self.high + other.high,
            very_high: self.very_high + other.very_high,
        }
    }

    fn frac(&self, count: usize, name: &'static str) -> Result<f64> {
        if self.present == 0 {
            return Err(Error::UndefinedFeature(name));
        }
        Ok(count as f64 / self.present as f64)
    }

    fn worn(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.present as f64 / self.slots as f64
        }
    }

    fn mean(&self, name: &'static str) -> Result<f64> {
        if self.present == 0 {
            return Err(Error::UndefinedFeature(name));
        }
        Ok(self.sum / self.present as f64)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct WeekCounts {
    all: RangeCounts,
    night: RangeCounts,
    day: RangeCounts,
}

fn week_counts(slots: &[u16]) -> WeekCounts {
    let mut out = WeekCounts::default();
    for (i, &r) in slots.iter().enumerate() {
        out.all.add(r);
        match day_part(i % SLOTS_PER_DAY) {
            DayPart::Night => out.night.add(r),
            DayPart::Day => out.day.add(r),
            DayPart::Neither => {}
        }
    }
    out
}

/// Summary statistics of one 7-day block, used for older-history covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeekSummary {
    pub mean_glucose: f64,
    pub very_low: f64,
    pub low: f64,
    pub in_range: f64,
    pub high: f64,
    pub worn: f64,
}

/// Range fractions of the 7 days ending at `end_day`.
pub fn week_summary(trace: &CgmTrace, end_day: usize) -> Result<WeekSummary> {
    let c = week_counts(trace.days_slice(end_day, 7)?).all;
    Ok(WeekSummary {
        mean_glucose: c.mean("g_7dr")?,
        very_low: c.frac(c.very_low, "very_low_7dr")?,
        low: c.frac(c.low, "low_7dr")?,
        in_range: c.frac(c.in_range, "in_range_7dr")?,
        high: c.frac(c.high, "high_7dr")?,
        worn: c.worn(),
    })
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Computes the full feature battery for decision day `day_index`, using the
/// two weeks of `trace` that end at midnight of that day.
pub fn compute_window_features(
    trace: &CgmTrace,
    demographics: &Demographics,
    day_index: usize,
) -> Result<ClinicalFeatures> {
    use Feature as F;

    let window = trace.days_slice(day_index, WINDOW_DAYS)?;
    let half = window.len() / 2;
    let prior = week_counts(&window[..half]);
    let last = week_counts(&window[half..]);
    let both = prior.all.merge(last.all);

    let mut f = ClinicalFeatures {
        values: vec![0.0; FEATURE_COUNT],
    };

    let l = &last.all;
    f.set(F::G7dr, l.mean("g_7dr")?);
    f.set(F::VeryLow7dr, l.frac(l.very_low, "very_low_7dr")?);
    f.set(F::Low7dr, l.frac(l.low, "low_7dr")?);
    f.set(F::InRange7dr, l.frac(l.in_range, "in_range_7dr")?);
    f.set(F::High7dr, l.frac(l.high, "high_7dr")?);
    f.set(F::VeryHigh7dr, l.frac(l.very_high, "very_high_7dr")?);
    f.set(
        F::Gri7dr,
        glycemia_risk_index(
            f.get(F::VeryLow7dr),
            f.get(F::Low7dr),
            f.get(F::High7dr),
            f.get(F::VeryHigh7dr),
        )?,
    );

    f.set(F::G14dr, both.mean("g_14dr")?);
    f.set(F::VeryLow14dr, both.frac(both.very_low, "very_low_14dr")?);
    f.set(F::Low14dr, both.frac(both.low, "low_14dr")?);
    f.set(F::InRange14dr, both.frac(both.in_range, "in_range_14dr")?);
    f.set(F::High14dr, both.frac(both.high, "high_14dr")?);
    f.set(
        F::VeryHigh14dr,
        both.frac(both.very_high, "very_high_14dr")?,
    );
    f.set(
        F::Gri14dr,
        glycemia_risk_index(
            f.get(F::VeryLow14dr),
            f.get(F::Low14dr),
            f.get(F::High14dr),
            f.get(F::VeryHigh14dr),
        )?,
    );

    let n = &last.night;
    f.set(
        F::NightVeryLow7dr,
        n.frac(n.very_low, "night_very_low_7dr")?,
    );
    f.set(F::NightLow7dr, n.frac(n.low, "night_low_7dr")?);
    f.set(F::NightHigh7dr, n.frac(n.high, "night_high_7dr")?);
    f.set(
        F::NightVeryHigh7dr,
        n.frac(n.very_high, "night_very_high_7dr")?,
    );
    let d = &last.day;
    f.set(F::DayVeryLow7dr, d.frac(d.very_low, "day_very_low_7dr")?);
    f.set(F::DayLow7dr, d.frac(d.low, "day_low_7dr")?);
    f.set(F::DayHigh7dr, d.frac(d.high, "day_high_7dr")?);
    f.set(F::DayVeryHigh7dr, d.frac(d.very_high, "day_very_high_7dr")?);

    f.set(F::TimeWorn7dr, l.worn());
    f.set(F::NightWorn7dr, n.worn());
    f.set(F::DayWorn7dr, d.worn());

    // Prior-week values for the deltas.
    let p = &prior.all;
    let pn = &prior.night;
    let prior_very_low = p.frac(p.very_low, "very_low_7dr_7d_delta")?;
    let prior_low = p.frac(p.low, "low_7dr_7d_delta")?;
    let prior_in_range = p.frac(p.in_range, "in_range_7dr_7d_delta")?;
    let prior_high = p.frac(p.high, "high_7dr")?;
    let prior_very_high = p.frac(p.very_high, "very_high_7dr_7d_delta")?;
    let prior_gri = glycemia_risk_index(prior_very_low, prior_low, prior_high, prior_very_high)?;
    let prior_night_very_low = pn.frac(pn.very_low, "night_very_low_7dr_7d_delta")?;
    let prior_night_low = pn.frac(pn.low, "night_low_7dr_7d_delta")?;
    let prior_night_high = pn.frac(pn.high, "night_high_7dr_7d_delta")?;

    f.set(F::Gri7drDelta, f.get(F::Gri7dr) - prior_gri);
    f.set(F::VeryLow7drDelta, f.get(F::VeryLow7dr) - prior_very_low);
    f.set(F::Low7drDelta, f.get(F::Low7dr) - prior_low);
    f.set(F::InRange7drDelta, f.get(F::InRange7dr) - prior_in_range);
    f.set(F::VeryHigh7drDelta, f.get(F::VeryHigh7dr) - prior_very_high);
    f.set(
        F::NightVeryLow7drDelta,
        f.get(F::NightVeryLow7dr) - prior_night_very_low,
    );
    f.set(F::NightLow7drDelta, f.get(F::NightLow7dr) - prior_night_low);
    f.set(
        F::NightHigh7drDelta,
        f.get(F::NightHigh7dr) - prior_night_high,
    );

    let demo = demographics;
    f.set(F::SexF, indicator(demo.sex_f));
    f.set(F::PublicInsurance, indicator(demo.public_insurance));
    f.set(
        F::EnglishPrimaryLanguage,
        indicator(demo.english_primary_language),
    );
    f.set(F::PopPilot, indicator(demo.population == Population::Pilot));
    f.set(F::Pop4T1, indicator(demo.population == Population::FourT1));
    f.set(F::Pop4T2, indicator(demo.population == Population::FourT2));
    f.set(F::PopTips, indicator(demo.population == Population::Tips));
    f.set(F::Age, demo.age);
    f.set(F::MonthsSinceOnset, demo.months_since_onset);
    f.set(F::UsingPump, indicator(demo.using_pump));
    f.set(F::UsingAid, indicator(demo.using_aid));
    f.set(
        F::DaysSinceMsg,
        demo.days_since_msg
            .map_or(DAYS_SINCE_MSG_CAP, |d| f64::from(d).min(DAYS_SINCE_MSG_CAP)),
    );

    f.refresh_flags();
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::WINDOW_SLOTS;

    fn demo() -> Demographics {
        Demographics {
            sex_f: true,
            public_insurance: false,
            english_primary_language: true,
            population: Population::FourT2,
            age: 12.5,
            months_since_onset: 6.0,
            using_pump: true,
            using_aid: false,
            days_since_msg: Some(75),
        }
    }

    fn trace_of(values: impl Fn(usize) -> Option<f64>) -> CgmTrace {
        CgmTrace::from_readings((0..WINDOW_SLOTS).map(values)).unwrap()
    }

    #[test]
    fn constant_trace() {
        let f = compute_window_features(&trace_of(|_| Some(120.0)), &demo(), 14).unwrap();
        assert_eq!(f.get(Feature::InRange7dr), 1.0);
        assert_eq!(f.get(Feature::Low7dr), 0.0);
        assert_eq!(f.get(Feature::High7dr), 0.0);
        assert_eq!(f.get(Feature::G7dr), 120.0);
        assert_eq!(f.get(Feature::TimeWorn7dr), 1.0);
        assert_eq!(f.get(Feature::InRange7drDelta), 0.0);
        assert_eq!(f.get(Feature::DaysSinceMsg), DAYS_SINCE_MSG_CAP);
        assert_eq!(f.get(Feature::Pop4T2), 1.0);
        assert_eq!(f.get(Feature::LowTir), 0.0);
    }

    #[test]
    fn two_point_trace() {
        let f = compute_window_features(
            &trace_of(|i| Some(if i % 2 == 0 { 60.0 } else { 200.0 })),
            &demo(),
            14,
        )
        .unwrap();
        assert_eq!(f.get(Feature::Low7dr), 0.5);
        assert_eq!(f.get(Feature::High7dr), 0.5);
        assert_eq!(f.get(Feature::InRange7dr), 0.0);
        assert_eq!(f.get(Feature::VeryLow7dr), 0.0);
        assert_eq!(f.get(Feature::Lows), 1.0);
    }

    #[test]
    fn all_missing_last_week_is_undefined() {
        let t = trace_of(|i| {
            if i < WINDOW_SLOTS / 2 {
                Some(100.0)
            } else {
                None
            }
        });
        assert!(matches!(
            compute_window_features(&t, &demo(), 14),
            Err(Error::UndefinedFeature(_))
        ));
    }

    #[test]
    fn requires_full_window() {
        let t = trace_of(|_| Some(100.0));
        assert!(compute_window_features(&t, &demo(), 13).is_err());
        assert!(compute_window_features(&t, &demo(), 15).is_err());
    }

    #[test]
    fn gri_examples() {
        assert_eq!(glycemia_risk_index(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let g = glycemia_risk_index(0.01, 0.04, 0.30, 0.10).unwrap();
        assert!((g - 42.2).abs() < 1e-9, "{g}");
        assert_eq!(glycemia_risk_index(0.5, 0.5, 0.5, 0.5).unwrap(), 100.0);
        assert!(glycemia_risk_index(0.05, 0.04, 0.3, 0.1).is_err());
        assert!(glycemia_risk_index(0.01, 0.04, 0.1, 0.3).is_err());
    }

    fn with(pairs: &[(Feature, f64)]) -> ClinicalFeatures {
        let mut f = ClinicalFeatures {
            values: vec![0.0; FEATURE_COUNT],
        };
        for &(k, v) in pairs {
            f.set(k, v);
        }
        f
    }

    #[test]
    fn flag_boundaries() {
        assert!(risk_flags(&with(&[(Feature::InRange7drDelta, -0.16)])).large_tir_drop);
        assert!(!risk_flags(&with(&[(Feature::InRange7drDelta, -0.15)])).large_tir_drop);
        assert!(!risk_flags(&with(&[(Feature::InRange7dr, 0.65)])).low_tir);
        let zero = risk_flags(&with(&[]));
        assert_eq!(
            zero,
            RiskFlags {
                large_tir_drop: false,
                low_tir: true,
                lows: false,
                very_lows: false
            }
        );
    }

    #[test]
    fn night_and_day_parts_follow_stated_hours() {
        assert_eq!(day_part(0), DayPart::Night);
        assert_eq!(day_part(4 * 12 + 11), DayPart::Night);
        assert_eq!(day_part(5 * 12), DayPart::Neither);
        assert_eq!(day_part(6 * 12), DayPart::Day);
        assert_eq!(day_part(21 * 12 + 11), DayPart::Day);
        assert_eq!(day_part(22 * 12), DayPart::Neither);
        assert_eq!(day_part(23 * 12), DayPart::Night);
    }
}
