//! Control covariates: what the reviewing clinician saw, optionally extended
//! with older weeks of CGM summaries and past-message indicators.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{week_summary, Feature};
use crate::sim::{LoggedPanel, REVIEW_INTERVAL_DAYS};

pub const MIN_HISTORY_WEEKS: usize = 2;
pub const MAX_HISTORY_WEEKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlCovariates {
    pub history_weeks: usize,
    pub names: Vec<String>,
    /// Positions (in `panel.rows()`) of the rows kept, aligned with `x`.
    pub rows: Vec<usize>,
    pub x: Array2<f64>,
    /// Rows dropped for lack of history.
    pub dropped: usize,
}

/// Summary of a covariate build, for run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub history_weeks: usize,
    pub columns: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl ControlCovariates {
    pub fn summary(&self) -> CovariateSummary {
        CovariateSummary {
            history_weeks: self.history_weeks,
            columns: self.names.len(),
            kept: self.rows.len(),
            dropped: self.dropped,
        }
    }
}

pub fn covariate_names(history_weeks: usize) -> Vec<String> {
    let mut names: Vec<String> = Feature::TIDE
        .iter()
        .chain(Feature::CONTROL_DEMOGRAPHICS)
        .map(|f| f.name().to_string())
        .collect();
    for week in 3..=history_weeks {
        for stat in ["mean_glucose", "very_low", "low", "in_range", "high"] {
            names.push(format!("week_minus_{week}_{stat}"));
        }
    }
    for k in (1..history_weeks).filter(|_| history_weeks > MIN_HISTORY_WEEKS) {
        names.push(format!("msg_week_minus_{k}"));
    }
    names
}

/// Builds covariates for the panel rows at `positions`. With more than two
/// weeks of history, rows whose trace does not reach back far enough are
/// dropped and counted.
pub fn build_control_covariates(
    panel: &LoggedPanel,
    positions: &[usize],
    history_weeks: usize,
) -> Result<ControlCovariates> {
    if !(MIN_HISTORY_WEEKS..=MAX_HISTORY_WEEKS).contains(&history_weeks) {
        return Err(Error::Config(format!(
            "history_weeks must be in 2..=4, got {history_weeks}"
        )));
    }
    let names = covariate_names(history_weeks);
    let week = REVIEW_INTERVAL_DAYS;
    let mut kept = Vec::with_capacity(positions.len());
    let mut flat = Vec::with_capacity(positions.len() * names.len());
    let mut dropped = 0;
    'rows: for &pos in positions {
        let row = panel
            .rows()
            .get(pos)
            .ok_or_else(|| Error::InconsistentInput(format!("row position {pos}")))?;
        let day = row.day as usize;
        if day < week * history_weeks {
            dropped += 1;
            continue;
        }
        let mut v: Vec<f64> = Feature::TIDE
            .iter()
            .chain(Feature::CONTROL_DEMOGRAPHICS)
            .map(|&f| row.features.get(f))
            .collect();
        if history_weeks > MIN_HISTORY_WEEKS {
            let trace = &panel
                .patient(row.patient_id)
                .ok_or_else(|| Error::InconsistentInput(format!("patient {}", row.patient_id)))?
                .trace;
            for w in 3..=history_weeks {
                match week_summary(trace, day - week * (w - 1)) {
                    Ok(s) => v.extend([s.mean_glucose, s.very_low, s.low, s.in_range, s.high]),
                    Err(Error::UndefinedFeature(_)) => {
                        dropped += 1;
                        continue 'rows;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        for k in (1..history_weeks).filter(|_| history_weeks > MIN_HISTORY_WEEKS) {
            let messaged = day
                .checked_sub(week * k)
                .and_then(|d| panel.row_position(row.patient_id, d as u32))
                .is_some_and(|p| panel.rows()[p].action.is_message());
            v.push(f64::from(messaged));
        }
        flat.extend(v);
        kept.push(pos);
    }
    let x = Array2::from_shape_vec((kept.len(), names.len()), flat)
        .map_err(|e| Error::InconsistentInput(e.to_string()))?;
    Ok(ControlCovariates {
        history_weeks,
        names,
        rows: kept,
        x,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sample_cohort, simulate_panel};

    #[test]
    fn two_weeks_is_tide_plus_demographics() {
        let names = covariate_names(2);
        let expected: Vec<String> = Feature::TIDE
            .iter()
            .chain(Feature::CONTROL_DEMOGRAPHICS)
            .map(|f| f.name().to_string())
            .collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn four_weeks_adds_message_indicators_and_drops_early_rows() {
        let panel = simulate_panel(&sample_cohort(5, 3), 63, 1.0, 3).unwrap();
        let all: Vec<usize> = (0..panel.rows().len()).collect();
        let c2 = build_control_covariates(&panel, &all, 2).unwrap();
        assert_eq!(c2.dropped, 0);
        let c4 = build_control_covariates(&panel, &all, 4).unwrap();
        for k in 1..4 {
            assert!(c4.names.contains(&format!("msg_week_minus_{k}")));
        }
        // Review days 14 and 21 lack four weeks of history.
        assert_eq!(c4.dropped, 2 * 5);
        assert!(c4.rows.iter().all(|&p| panel.rows()[p].day >= 28));
        // Indicators agree with the logged actions.
        let col = c4
            .names
            .iter()
            .position(|n| n == "msg_week_minus_1")
            .unwrap();
        for (i, &p) in c4.rows.iter().enumerate() {
            let r = &panel.rows()[p];
            let prev = panel.row_position(r.patient_id, r.day - 7).unwrap();
            assert_eq!(
                c4.x[[i, col]],
                f64::from(panel.rows()[prev].action.is_message())
            );
        }
        assert!(build_control_covariates(&panel, &all, 5).is_err());
    }
}
