//! Outcome models and cross-fitting helpers.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boosting::{fit_boosted, BoostConfig, Regressor, NUISANCE};
use super::propensity::{check_support, fit_propensity, MIN_CLASS_SUPPORT};
use crate::error::Result;
use crate::evaluation::dr::dr_row;
use crate::rng::{self, domain};

/// Per-action regressions `r̂(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub models: Vec<Regressor>,
}

impl OutcomeModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.models.iter().map(|m| m.predict(x)).collect()
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }
}

/// Rows of `x` whose action equals `a`, with their targets.
pub(crate) fn rows_with_action(
    x: ArrayView2<'_, f64>,
    actions: &[usize],
    y: &[f64],
    a: usize,
) -> (Array2<f64>, Vec<f64>) {
    let idx: Vec<usize> = (0..actions.len()).filter(|&i| actions[i] == a).collect();
    (x.select(Axis(0), &idx), idx.iter().map(|&i| y[i]).collect())
}

pub fn fit_outcome_model(
    x: ArrayView2<'_, f64>,
    actions: &[usize],
    y: &[f64],
    n_actions: usize,
) -> Result<OutcomeModel> {
    fit_outcome_model_with(x, actions, y, n_actions, NUISANCE)
}

pub fn fit_outcome_model_with(
    x: ArrayView2<'_, f64>,
    actions: &[usize],
    y: &[f64],
    n_actions: usize,
    config: BoostConfig,
) -> Result<OutcomeModel> {
    check_support(actions, n_actions, MIN_CLASS_SUPPORT)?;
    let models = (0..n_actions)
        .into_par_iter()
        .map(|a| {
            let (xa, ya) = rows_with_action(x, actions, y, a);
            fit_boosted(xa.view(), &ya, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OutcomeModel { models })
}

/// Random assignment of `n` rows to `k` folds of near-equal size.
pub fn fold_ids(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, domain::FOLDS, 1));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Doubly robust scores of every row and action, with nuisances fitted on the
/// other fold (2-fold cross-fitting).
pub fn cross_fit_dr_scores(
    x: ArrayView2<'_, f64>,
    actions: &[usize],
    y: &[f64],
    n_actions: usize,
    clip_floor: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = y.len();
    let folds = fold_ids(n, 2, seed);
    let mut out = vec![Vec::new(); n];
    for f in 0..2 {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let xt = x.select(Axis(0), &train);
        let at: Vec<usize> = train.iter().map(|&i| actions[i]).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let outcome = fit_outcome_model(xt.view(), &at, &yt, n_actions)?;
        let propensity = fit_propensity(xt.view(), &at, n_actions, clip_floor)?;
        let scored: Vec<(usize, Vec<f64>)> = test
            .par_iter()
            .map(|&i| {
                let row = x.row(i).to_vec();
                let rhat = outcome.predict(&row);
                let ehat = propensity.predict(&row);
                (i, dr_row(y[i], actions[i], &rhat, &ehat))
            })
            .collect();
        for (i, s) in scored {
            out[i] = s;
        }
    }
    Ok(out)
}
