//! Capacity-constrained targeting policies induced by a CATE function.
//!
//! For each patient the best action is the argmax of the estimated effects
//! over all actions, control included (its effect is 0). Patients are ranked
//! by that best effect and the top `K` receive their best action; everyone
//! else gets control. Action ties go to the lowest class id and rank ties to
//! the lowest patient id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::CateModel;
use crate::representations::StateRep;
use crate::sim::{EffectInputs, LoggedPanel, OracleCate};

/// Effect scores of one patient on one day, indexed by action id.
/// Entry 0 (control) is always treated as exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScores {
    pub patient_id: u32,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub patient_id: u32,
    pub action: usize,
    /// Best score `τ̂(s_i, a_i*)`.
    pub score: f64,
    /// 1-based rank.
    pub rank: usize,
}

/// One day's assignment, entries in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub day: u32,
    pub capacity: usize,
    pub entries: Vec<AssignmentEntry>,
}

impl Assignment {
    pub fn treated(&self) -> usize {
        self.entries.iter().filter(|e| e.action != 0).count()
    }

    pub fn action_of(&self, patient_id: u32) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.patient_id == patient_id)
            .map(|e| e.action)
    }
}

/// `round(fraction · n)`, the per-day capacity at a treated fraction.
pub fn capacity_for(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Best action and its score; ties go to the lowest action id.
pub fn best_action(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, 0.0);
    for (a, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (a, s);
        }
    }
    best
}

/// Ranking order: descending score, then ascending patient id.
pub(crate) fn rank_order(a: (f64, u32), b: (f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Induces the day's assignment from per-patient score vectors.
pub fn induce_from_scores(day: u32, patients: &[PatientScores], k: usize) -> Result<Assignment> {
    if k > patients.len() {
        return Err(Error::Domain(format!(
            "capacity {k} exceeds the {} patients available",
            patients.len()
        )));
    }
    let mut best: Vec<(u32, usize, f64)> = Vec::with_capacity(patients.len());
    for p in patients {
        if p.scores.iter().skip(1).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!(
                "scores of patient {}",
                p.patient_id
            )));
        }
        let (a, s) = best_action(&p.scores);
        best.push((p.patient_id, a, s));
    }
    best.sort_by(|x, y| rank_order((x.2, x.0), (y.2, y.0)));
    let entries = best
        .into_iter()
        .enumerate()
        .map(|(i, (patient_id, a, score))| AssignmentEntry {
            patient_id,
            action: if i < k { a } else { 0 },
            score,
            rank: i + 1,
        })
        .collect();
    Ok(Assignment {
        day,
        capacity: k,
        entries,
    })
}

/// Induces the policy of a fitted CATE model over one day's patient states.
pub fn induce_policy(
    cate: &CateModel,
    day: u32,
    states: &[(u32, StateRep)],
    k: usize,
) -> Result<Assignment> {
    let scores = states
        .iter()
        .map(|(id, s)| {
            Ok(PatientScores {
                patient_id: *id,
                scores: cate.predict(&s.vector)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    induce_from_scores(day, &scores, k)
}

/// The oracle-optimal policy: Definition-1 ranking with the true effects.
pub fn optimal_policy(
    oracle: &OracleCate,
    day: u32,
    states: &[(u32, EffectInputs)],
    k: usize,
) -> Result<Assignment> {
    let scores: Vec<PatientScores> = states
        .iter()
        .map(|(id, s)| PatientScores {
            patient_id: *id,
            scores: oracle.effects(s).to_vec(),
        })
        .collect();
    induce_from_scores(day, &scores, k)
}

/// `(1/T) Σ_t (1/K) Σ_i effect(i, t, π_i)`; days where `K = 0` contribute 0.
pub fn att_of_assignments<F>(assignments: &[Assignment], k: usize, mut effect: F) -> Result<f64>
where
    F: FnMut(u32, u32, usize) -> Result<f64>,
{
    if assignments.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for day in assignments {
        let treated = day.treated();
        if treated > k {
            return Err(Error::Capacity {
                day: day.day,
                treated,
                capacity: k,
            });
        }
        if k == 0 {
            continue;
        }
        let mut treated: Vec<&AssignmentEntry> =
            day.entries.iter().filter(|e| e.action != 0).collect();
        treated.sort_by_key(|e| e.patient_id);
        let mut sum = 0.0;
        for e in treated {
            sum += effect(e.patient_id, day.day, e.action)?;
        }
        total += sum / k as f64;
    }
    Ok(total / assignments.len() as f64)
}

/// One day of true and estimated effect tables for the same patients.
#[derive(Debug, Clone)]
pub struct DayTables {
    pub day: u32,
    pub truth: Vec<PatientScores>,
    pub estimate: Vec<PatientScores>,
}

fn truth_lookup(truth: &[PatientScores], patient: u32, action: usize) -> Result<f64> {
    truth
        .iter()
        .find(|p| p.patient_id == patient)
        .and_then(|p| p.scores.get(action).copied())
        .ok_or_else(|| Error::InconsistentInput(format!("no truth for patient {patient}")))
}

/// Oracle ATT of the optimal policy minus that of the estimate-induced policy,
/// both valued with the true effects, with capacity `round(fraction · N_t)`.
pub fn regret_from_tables(days: &[DayTables], fraction: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for d in days {
        let k = capacity_for(fraction, d.truth.len());
        let opt = induce_from_scores(d.day, &d.truth, k)?;
        let est = induce_from_scores(d.day, &d.estimate, k)?;
        let value = |a: &Assignment| {
            att_of_assignments(std::slice::from_ref(a), k, |p, _, act| {
                truth_lookup(&d.truth, p, act)
            })
        };
        total += value(&opt)? - value(&est)?;
        counted += 1;
    }
    Ok(if counted == 0 {
        0.0
    } else {
        total / counted as f64
    })
}

/// Regret of a fitted clinical-class CATE model on a simulated panel, with
/// `states[i]` the state representation of `panel.rows()[i]`.
pub fn policy_regret(
    panel: &LoggedPanel,
    cate: &CateModel,
    states: &[StateRep],
    fraction: f64,
) -> Result<f64> {
    let oracle = panel.oracle()?;
    if states.len() != panel.rows().len() {
        return Err(Error::InconsistentInput(
            "one state per panel row is required".into(),
        ));
    }
    let mut by_day: std::collections::BTreeMap<u32, DayTables> = Default::default();
    for ((row, o), s) in panel.rows().iter().zip(oracle).zip(states) {
        let entry = by_day.entry(row.day).or_insert_with(|| DayTables {
            day: row.day,
            truth: Vec::new(),
            estimate: Vec::new(),
        });
        entry.truth.push(PatientScores {
            patient_id: row.patient_id,
            scores: o.effects.to_vec(),
        });
        entry.estimate.push(PatientScores {
            patient_id: row.patient_id,
            scores: cate.predict(&s.vector)?,
        });
    }
    let days: Vec<DayTables> = by_day.into_values().collect();
    regret_from_tables(&days, fraction)
}
