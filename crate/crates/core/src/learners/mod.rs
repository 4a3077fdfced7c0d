//! CATE learners: S-, T- and X-learners on boosted trees, an honest causal
//! forest, a forest on doubly robust scores, and a validation-weighted ensemble.
//!
//! Every model predicts a vector of effects indexed by action id, with the
//! control entry fixed at exactly 0.

pub mod boosting;
pub mod forest;
pub mod nuisance;
pub mod propensity;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use boosting::{fit_boosted, fit_regressor, Regressor, NUISANCE};
use forest::{fit_honest_forest, fit_random_forest, ForestConfig, HonestForest, RandomForest};
use nuisance::{cross_fit_dr_scores, fold_ids, rows_with_action};
use propensity::{
    check_support, fit_propensity, PropensityModel, DEFAULT_CLIP_FLOOR, MIN_CLASS_SUPPORT,
};

pub use boosting::BoostConfig;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateMethod {
    SLearner,
    TLearner,
    XLearner,
    CausalForest,
    DrForest,
    Ensemble,
}

impl CateMethod {
    pub const ALL: [CateMethod; 6] = [
        CateMethod::SLearner,
        CateMethod::TLearner,
        CateMethod::XLearner,
        CateMethod::CausalForest,
        CateMethod::DrForest,
        CateMethod::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CateMethod::SLearner => "s_learner",
            CateMethod::TLearner => "t_learner",
            CateMethod::XLearner => "x_learner",
            CateMethod::CausalForest => "causal_forest",
            CateMethod::DrForest => "dr_forest",
            CateMethod::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for CateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown CATE method {s:?}")))
    }
}

/// Training data for a CATE learner: state vectors, action ids and rewards.
#[derive(Debug, Clone)]
pub struct CateData {
    pub x: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub n_actions: usize,
    pub feature_names: Vec<String>,
}

impl CateData {
    pub fn new(
        x: Array2<f64>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        n_actions: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != actions.len() || actions.len() != rewards.len() {
            return Err(Error::InconsistentInput(
                "states, actions and rewards differ in length".into(),
            ));
        }
        if x.ncols() != feature_names.len() {
            return Err(Error::InconsistentInput(
                "feature names do not match state width".into(),
            ));
        }
        if x.iter().chain(&rewards).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CATE training data".into()));
        }
        Ok(Self {
            x,
            actions,
            rewards,
            n_actions,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Anything that maps a state vector to per-action effects.
pub trait CateScorer: Sync {
    fn effects(&self, state: &[f64]) -> Result<Vec<f64>>;
}

impl<F> CateScorer for F
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn effects(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self(state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CateFit {
    SLearner {
        model: Regressor,
    },
    TLearner {
        models: Vec<Regressor>,
    },
    XLearner {
        treated: Vec<Option<Regressor>>,
        control: Vec<Option<Regressor>>,
        propensity: PropensityModel,
    },
    CausalForest {
        forests: Vec<Option<HonestForest>>,
    },
    DrForest {
        forests: Vec<Option<RandomForest>>,
    },
    Ensemble {
        members: Vec<CateModel>,
        weights: Vec<f64>,
    },
}

/// A fitted CATE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub version: u32,
    pub method: CateMethod,
    pub n_actions: usize,
    pub feature_names: Vec<String>,
    pub fit: CateFit,
}

fn one_hot_row(state: &[f64], action: usize, n_actions: usize) -> Vec<f64> {
    let mut v = state.to_vec();
    v.extend((1..n_actions).map(|a| f64::from(a == action)));
    v
}

impl CateModel {
    /// Effects `τ̂(s, a)` for every action; entry 0 is exactly 0.
    pub fn predict(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.feature_names.len() {
            return Err(Error::InconsistentInput(format!(
                "state has {} entries, model expects {}",
                state.len(),
                self.feature_names.len()
            )));
        }
        let k = self.n_actions;
        let mut out = vec![0.0; k];
        match &self.fit {
            CateFit::SLearner { model } => {
                let base = model.predict(&one_hot_row(state, 0, k));
                for (a, o) in out.iter_mut().enumerate().skip(1) {
                    *o = model.predict(&one_hot_row(state, a, k)) - base;
                }
            }
            CateFit::TLearner { models } => {
                let base = models[0].predict(state);
                for (a, o) in out.iter_mut().enumerate().skip(1) {
                    *o = models[a].predict(state) - base;
                }
            }
            CateFit::XLearner {
                treated,
                control,
                propensity,
            } => {
                let e = propensity.predict(state);
                for (a, o) in out.iter_mut().enumerate().skip(1) {
                    let (Some(gt), Some(gc)) = (&treated[a], &control[a]) else {
                        continue;
                    };
                    let weight = e[0] / (e[0] + e[a]);
                    *o = weight * gt.predict(state) + (1.0 - weight) * gc.predict(state);
                }
            }
            CateFit::CausalForest { forests } => {
                for (a, o) in out.iter_mut().enumerate().skip(1) {
                    if let Some(f) = &forests[a] {
                        *o = f.predict(state);
                    }
                }
            }
            CateFit::DrForest { forests } => {
                for (a, o) in out.iter_mut().enumerate().skip(1) {
                    if let Some(f) = &forests[a] {
                        *o = f.predict(state);
                    }
                }
            }
            CateFit::Ensemble { members, weights } => {
                for (m, w) in members.iter().zip(weights) {
                    let p = m.predict(state)?;
                    for a in 1..k {
                        out[a] += w * p[a];
                    }
                }
            }
        }
        out[0] = 0.0;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} prediction", self.method)));
        }
        Ok(out)
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        x.rows()
            .into_iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: CateModel = serde_json::from_str(s)?;
        if m.version != ARTIFACT_VERSION {
            return Err(Error::InconsistentInput(format!(
                "model artifact version {} is not supported",
                m.version
            )));
        }
        Ok(m)
    }
}

impl CateScorer for CateModel {
    fn effects(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.predict(state)
    }
}

fn model(data: &CateData, method: CateMethod, fit: CateFit) -> CateModel {
    CateModel {
        version: ARTIFACT_VERSION,
        method,
        n_actions: data.n_actions,
        feature_names: data.feature_names.clone(),
        fit,
    }
}

fn fit_s(data: &CateData, seed: u64) -> Result<CateModel> {
    let k = data.n_actions;
    let d = data.x.ncols();
    let mut x = Array2::zeros((data.len(), d + k - 1));
    for (i, row) in data.x.rows().into_iter().enumerate() {
        let v = one_hot_row(&row.to_vec(), data.actions[i], k);
        x.row_mut(i).assign(&ndarray::Array1::from(v));
    }
    let m = fit_regressor(x.view(), &data.rewards, seed)?;
    Ok(model(
        data,
        CateMethod::SLearner,
        CateFit::SLearner { model: m },
    ))
}

fn per_action_regressors(data: &CateData, seed: u64) -> Result<Vec<Regressor>> {
    (0..data.n_actions)
        .into_par_iter()
        .map(|a| {
            let (xa, ya) = rows_with_action(data.x.view(), &data.actions, &data.rewards, a);
            fit_regressor(xa.view(), &ya, derive_seed(seed, 100, a as u64))
        })
        .collect()
}

fn fit_t(data: &CateData, seed: u64) -> Result<CateModel> {
    let models = per_action_regressors(data, seed)?;
    Ok(model(
        data,
        CateMethod::TLearner,
        CateFit::TLearner { models },
    ))
}

fn fit_x(data: &CateData, seed: u64) -> Result<CateModel> {
    let mu = per_action_regressors(data, seed)?;
    let propensity = fit_propensity(
        data.x.view(),
        &data.actions,
        data.n_actions,
        DEFAULT_CLIP_FLOOR,
    )?;
    let (x0, y0) = rows_with_action(data.x.view(), &data.actions, &data.rewards, 0);
    let sides: Vec<(Option<Regressor>, Option<Regressor>)> = (0..data.n_actions)
        .into_par_iter()
        .map(|a| {
            if a == 0 {
                return Ok((None, None));
            }
            let (xa, ya) = rows_with_action(data.x.view(), &data.actions, &data.rewards, a);
            let d_treated: Vec<f64> = xa
                .rows()
                .into_iter()
                .zip(&ya)
                .map(|(r, y)| y - mu[0].predict(&r.to_vec()))
                .collect();
            let d_control: Vec<f64> = x0
                .rows()
                .into_iter()
                .zip(&y0)
                .map(|(r, y)| mu[a].predict(&r.to_vec()) - y)
                .collect();
            let gt = fit_regressor(xa.view(), &d_treated, derive_seed(seed, 200, a as u64))?;
            let gc = fit_regressor(x0.view(), &d_control, derive_seed(seed, 300, a as u64))?;
            Ok((Some(gt), Some(gc)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (treated, control) = sides.into_iter().unzip();
    Ok(model(
        data,
        CateMethod::XLearner,
        CateFit::XLearner {
            treated,
            control,
            propensity,
        },
    ))
}

/// Cross-fitted residuals `y − m̂(x)` and `w − ê(x)` for a binary treatment.
fn residualise(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    w: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let folds = fold_ids(n, 2, seed);
    let mut yt = vec![0.0; n];
    let mut wt = vec![0.0; n];
    for f in 0..2 {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let xs = x.select(Axis(0), &train);
        let ys: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let ws: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        let m = fit_boosted(xs.view(), &ys, NUISANCE)?;
        let e = fit_boosted(xs.view(), &ws, NUISANCE)?;
        for i in (0..n).filter(|&i| folds[i] == f) {
            let row = x.row(i).to_vec();
            yt[i] = y[i] - m.predict(&row);
            wt[i] = w[i] - e.predict(&row).clamp(0.01, 0.99);
        }
    }
    Ok((yt, wt))
}

fn fit_causal_forest(data: &CateData, config: ForestConfig, seed: u64) -> Result<CateModel> {
    let forests = (0..data.n_actions)
        .into_par_iter()
        .map(|a| {
            if a == 0 {
                return Ok(None);
            }
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| data.actions[i] == 0 || data.actions[i] == a)
                .collect();
            let x = data.x.select(Axis(0), &idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.rewards[i]).collect();
            let w: Vec<f64> = idx
                .iter()
                .map(|&i| f64::from(data.actions[i] == a))
                .collect();
            let s = derive_seed(seed, 400, a as u64);
            let (yt, wt) = residualise(x.view(), &y, &w, s)?;
            fit_honest_forest(x.view(), &yt, &wt, config, s).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(model(
        data,
        CateMethod::CausalForest,
        CateFit::CausalForest { forests },
    ))
}

/// Cross-fitted DR scores used as the targets of the DR forest.
pub fn dr_forest_targets(data: &CateData, seed: u64) -> Result<Vec<Vec<f64>>> {
    cross_fit_dr_scores(
        data.x.view(),
        &data.actions,
        &data.rewards,
        data.n_actions,
        DEFAULT_CLIP_FLOOR,
        derive_seed(seed, 500, 0),
    )
}

fn fit_dr_forest(data: &CateData, config: ForestConfig, seed: u64) -> Result<CateModel> {
    let targets = dr_forest_targets(data, seed)?;
    let forests = (0..data.n_actions)
        .into_par_iter()
        .map(|a| {
            if a == 0 {
                return Ok(None);
            }
            let y: Vec<f64> = targets.iter().map(|t| t[a]).collect();
            fit_random_forest(data.x.view(), &y, config, derive_seed(seed, 600, a as u64)).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(model(
        data,
        CateMethod::DrForest,
        CateFit::DrForest { forests },
    ))
}

/// Fits a single (non-ensemble) CATE method on training data.
pub fn fit_cate(method: CateMethod, data: &CateData, seed: u64) -> Result<CateModel> {
    fit_cate_with(method, data, ForestConfig::default(), seed)
}

pub fn fit_cate_with(
    method: CateMethod,
    data: &CateData,
    forest: ForestConfig,
    seed: u64,
) -> Result<CateModel> {
    if data.n_actions < 2 {
        return Err(Error::Domain("need control and at least one action".into()));
    }
    check_support(&data.actions, data.n_actions, MIN_CLASS_SUPPORT)?;
    match method {
        CateMethod::SLearner => fit_s(data, seed),
        CateMethod::TLearner => fit_t(data, seed),
        CateMethod::XLearner => fit_x(data, seed),
        CateMethod::CausalForest => fit_causal_forest(data, forest, seed),
        CateMethod::DrForest => fit_dr_forest(data, forest, seed),
        CateMethod::Ensemble => Err(Error::Domain(
            "ensembles are built from fitted candidates with fit_ensemble".into(),
        )),
    }
}

pub const ENSEMBLE_STEPS: usize = 500;
pub const ENSEMBLE_STEP_SIZE: f64 = 0.05;

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        css += x;
        let t = (css - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Convex weights minimising the squared error between the weighted candidate
/// predictions and DR targets, over all rows and non-control actions.
/// `predictions[j][i][a]` is candidate `j`'s effect for row `i`, action `a`.
pub fn ensemble_weights(predictions: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = predictions.len();
    if m < 2 {
        return Err(Error::EmptyCandidates(m));
    }
    let n = targets.len();
    if predictions.iter().any(|p| p.len() != n) {
        return Err(Error::InconsistentInput(
            "candidate predictions and targets differ in length".into(),
        ));
    }
    let k = targets.first().map_or(0, Vec::len);
    // Gram matrix and cross moments make each step O(m²).
    let mut gram = vec![vec![0.0; m]; m];
    let mut cross = vec![0.0; m];
    for i in 0..n {
        for a in 1..k {
            for j in 0..m {
                let pj = predictions[j][i][a];
                cross[j] += pj * targets[i][a];
                for l in j..m {
                    gram[j][l] += pj * predictions[l][i][a];
                }
            }
        }
    }
    #[allow(clippy::needless_range_loop)]
    for j in 0..m {
        for l in 0..j {
            gram[j][l] = gram[l][j];
        }
    }
    let scale = ((0..m).map(|j| gram[j][j]).sum::<f64>() / m as f64).max(1e-12);
    let mut w = vec![1.0 / m as f64; m];
    for _ in 0..ENSEMBLE_STEPS {
        let grad: Vec<f64> = (0..m)
            .map(|j| {
                let gw: f64 = (0..m).map(|l| gram[j][l] * w[l]).sum();
                2.0 * (gw - cross[j]) / scale
            })
            .collect();
        let stepped: Vec<f64> = w
            .iter()
            .zip(&grad)
            .map(|(wi, g)| wi - ENSEMBLE_STEP_SIZE * g)
            .collect();
        w = project_to_simplex(&stepped);
    }
    Ok(w)
}

/// Weighted ensemble of fitted candidates, with weights learned against
/// validation DR scores `validation_dr[i][a]` for the states `validation_x`.
pub fn fit_ensemble(
    candidates: Vec<CateModel>,
    validation_x: ArrayView2<'_, f64>,
    validation_dr: &[Vec<f64>],
) -> Result<CateModel> {
    if candidates.len() < 2 {
        return Err(Error::EmptyCandidates(candidates.len()));
    }
    let first = &candidates[0];
    if candidates
        .iter()
        .any(|c| c.n_actions != first.n_actions || c.feature_names != first.feature_names)
    {
        return Err(Error::InconsistentInput(
            "ensemble candidates disagree on actions or features".into(),
        ));
    }
    let predictions = candidates
        .iter()
        .map(|c| c.predict_rows(validation_x))
        .collect::<Result<Vec<_>>>()?;
    let weights = ensemble_weights(&predictions, validation_dr)?;
    Ok(CateModel {
        version: ARTIFACT_VERSION,
        method: CateMethod::Ensemble,
        n_actions: first.n_actions,
        feature_names: first.feature_names.clone(),
        fit: CateFit::Ensemble {
            members: candidates,
            weights,
        },
    })
}
