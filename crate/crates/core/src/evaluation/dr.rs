//! Doubly robust scores.

use std::collections::HashMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::nuisance::{fit_outcome_model, OutcomeModel};
use crate::learners::propensity::{fit_propensity, PropensityModel};

/// `Γ̂(a) = r̂(a) − r̂(0) + (r − r̂(a_obs)) · (1{a_obs = a}/ê(a) − 1{a_obs = 0}/ê(0))`
/// for every action, with `Γ̂(0) = 0`.
pub fn dr_row(reward: f64, observed: usize, rhat: &[f64], ehat: &[f64]) -> Vec<f64> {
    let residual = reward - rhat[observed];
    let control_weight = if observed == 0 { 1.0 / ehat[0] } else { 0.0 };
    let mut out = vec![0.0; rhat.len()];
    for a in 1..rhat.len() {
        let treated_weight = if observed == a { 1.0 / ehat[a] } else { 0.0 };
        out[a] = rhat[a] - rhat[0] + residual * (treated_weight - control_weight);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrRow {
    pub patient_id: u32,
    pub day: u32,
    pub action: usize,
    pub reward: f64,
    pub scores: Vec<f64>,
}

/// DR scores `Γ̂_it(a)` of the evaluation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrScoreTable {
    pub n_actions: usize,
    pub rows: Vec<DrRow>,
    #[serde(skip)]
    index: HashMap<(u32, u32), usize>,
}

impl DrScoreTable {
    pub fn new(n_actions: usize, rows: Vec<DrRow>) -> Result<Self> {
        for r in &rows {
            if r.scores.len() != n_actions || r.scores.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "DR scores of patient {} on day {}",
                    r.patient_id, r.day
                )));
            }
            if r.scores[0] != 0.0 {
                return Err(Error::InconsistentInput(
                    "control DR score must be 0".into(),
                ));
            }
        }
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.patient_id, r.day), i))
            .collect();
        Ok(Self {
            n_actions,
            rows,
            index,
        })
    }

    pub fn score(&self, patient_id: u32, day: u32, action: usize) -> Result<f64> {
        let i = self.index.get(&(patient_id, day)).ok_or_else(|| {
            Error::InconsistentInput(format!("no DR row for patient {patient_id} on day {day}"))
        })?;
        self.rows[*i]
            .scores
            .get(action)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown action id {action}")))
    }

    /// DR ATE estimate of every action: the column means.
    pub fn ate(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        if self.rows.is_empty() {
            return out;
        }
        for r in &self.rows {
            for (o, s) in out.iter_mut().zip(&r.scores) {
                *o += s;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.rows.len() as f64);
        out
    }

    /// Scales every score by `c`.
    pub fn scaled(&self, c: f64) -> DrScoreTable {
        let rows = self
            .rows
            .iter()
            .map(|r| DrRow {
                scores: r.scores.iter().map(|s| s * c).collect(),
                ..r.clone()
            })
            .collect();
        DrScoreTable::new(self.n_actions, rows).expect("scaling keeps scores finite")
    }

    pub fn patient_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.patient_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Identity and outcome of one evaluation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub patient_id: u32,
    pub day: u32,
    pub action: usize,
    pub reward: f64,
}

/// DR scores from per-row nuisance predictions: `rhat[i][a]` and `ehat[i][a]`.
pub fn dr_scores(
    rows: &[EvalRow],
    rhat: &[Vec<f64>],
    ehat: &[Vec<f64>],
    clip_floor: f64,
) -> Result<DrScoreTable> {
    if rhat.len() != rows.len() || ehat.len() != rows.len() {
        return Err(Error::InconsistentInput(
            "nuisance predictions do not match the evaluation rows".into(),
        ));
    }
    let n_actions = rhat.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(rows.len());
    for ((r, rh), eh) in rows.iter().zip(rhat).zip(ehat) {
        if rh.len() != n_actions || eh.len() != n_actions || r.action >= n_actions {
            return Err(Error::InconsistentInput("nuisance width".into()));
        }
        assert!(
            eh.iter().all(|&e| e >= clip_floor * (1.0 - 1e-9)),
            "propensity below the clip floor"
        );
        out.push(DrRow {
            patient_id: r.patient_id,
            day: r.day,
            action: r.action,
            reward: r.reward,
            scores: dr_row(r.reward, r.action, rh, eh),
        });
    }
    DrScoreTable::new(n_actions, out)
}

/// Outcome and propensity models on the control covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nuisances {
    pub outcome: OutcomeModel,
    pub propensity: PropensityModel,
}

impl Nuisances {
    pub fn fit(
        xc: ArrayView2<'_, f64>,
        actions: &[usize],
        rewards: &[f64],
        n_actions: usize,
        clip_floor: f64,
    ) -> Result<Self> {
        Ok(Self {
            outcome: fit_outcome_model(xc, actions, rewards, n_actions)?,
            propensity: fit_propensity(xc, actions, n_actions, clip_floor)?,
        })
    }

    /// Outcome and propensity predictions for each row of `xc`.
    pub fn predict(&self, xc: ArrayView2<'_, f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rows: Vec<Vec<f64>> = xc.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.par_iter()
            .map(|r| (self.outcome.predict(r), self.propensity.predict(r)))
            .unzip()
    }

    pub fn score(&self, rows: &[EvalRow], xc: ArrayView2<'_, f64>) -> Result<DrScoreTable> {
        let (rhat, ehat) = self.predict(xc);
        dr_scores(rows, &rhat, &ehat, self.propensity.clip_floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let g = dr_row(0.2, 1, &[0.05, 0.1], &[0.75, 0.25]);
        assert!((g[1] - 0.45).abs() < 1e-12, "{}", g[1]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn control_score_is_exactly_zero_for_control_rows() {
        let g = dr_row(0.3, 0, &[0.1, 0.2, -0.1], &[0.5, 0.3, 0.2]);
        assert_eq!(g[0], 0.0);
        // Residual 0.2 weighted by −1/ê(0) = −2.
        assert!((g[1] - (0.1 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn scaling_is_linear() {
        let rows = vec![EvalRow {
            patient_id: 1,
            day: 14,
            action: 1,
            reward: 0.2,
        }];
        let t = dr_scores(&rows, &[vec![0.05, 0.1]], &[vec![0.75, 0.25]], 0.01).unwrap();
        let s = t.scaled(3.0);
        assert!((s.ate()[1] - 3.0 * t.ate()[1]).abs() < 1e-12);
    }
}
