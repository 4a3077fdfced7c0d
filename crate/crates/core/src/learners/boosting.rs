//! Gradient-boosted regression trees on squared error.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tree::{canonical_order, grow, Binner, GrowParams, SquaredError, Tree};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl BoostConfig {
    pub const fn new(n_trees: usize, max_depth: usize, learning_rate: f64) -> Self {
        Self {
            n_trees,
            max_depth,
            learning_rate,
            min_leaf: 20,
        }
    }
}

/// Candidate configurations tried by [`fit_regressor`].
pub const GRID: [BoostConfig; 3] = [
    BoostConfig::new(60, 2, 0.1),
    BoostConfig::new(100, 3, 0.1),
    BoostConfig::new(150, 4, 0.05),
];

/// Configuration used for nuisance models.
pub const NUISANCE: BoostConfig = BoostConfig::new(100, 3, 0.1);

pub const MIN_ROWS: usize = 10;
const CV_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub base_score: f64,
    pub learning_rate: f64,
    pub config: BoostConfig,
    pub trees: Vec<Tree>,
}

impl Regressor {
    pub fn constant(value: f64) -> Self {
        Self {
            base_score: value,
            learning_rate: 0.0,
            config: NUISANCE,
            trees: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * s
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict(s),
                None => self.predict(&r.to_vec()),
            })
            .collect()
    }
}

pub(crate) fn check_inputs(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InconsistentInput(format!(
            "{} feature rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if y.len() < MIN_ROWS {
        return Err(Error::TooFewRows {
            required: MIN_ROWS,
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression inputs".into()));
    }
    Ok(())
}

/// Row-major copy of `x` reordered by `order`.
pub(crate) fn gather(x: ArrayView2<'_, f64>, order: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(order.len() * x.ncols());
    for &i in order {
        out.extend(x.row(i).iter());
    }
    out
}

fn boost(x: &[f64], y: &[f64], d: usize, config: BoostConfig) -> Regressor {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    if y.iter().all(|&v| v == y[0]) {
        return Regressor::constant(y[0]);
    }
    let binner = Binner::fit(x, n, d);
    let m = binner.transform(x, n);
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf.min((n / 8).max(2)),
        mtry: None,
    };
    // Feature subsampling is off, so the grower never draws from this stream.
    let mut unused = rng::stream(0, domain::TREE, 0);
    let mut pred = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let rows: Vec<u32> = (0..n as u32).collect();
        let tree = grow(
            &binner,
            &m,
            rows,
            &SquaredError(&residual),
            params,
            &mut unused,
        );
        if tree.nodes.len() == 1 {
            break;
        }
        let bins = tree.split_bins(&binner);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.nodes[tree.leaf_of_binned(&bins, &m, i)].value;
        }
        trees.push(tree);
    }
    Regressor {
        base_score: base,
        learning_rate: config.learning_rate,
        config,
        trees,
    }
}

/// Boosts with a fixed configuration. Row order does not affect the result.
pub fn fit_boosted(x: ArrayView2<'_, f64>, y: &[f64], config: BoostConfig) -> Result<Regressor> {
    check_inputs(x, y)?;
    let d = x.ncols();
    let flat = gather(x, &(0..y.len()).collect::<Vec<_>>());
    let order = canonical_order(&flat, y, d);
    let xs = gather(x, &order);
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    Ok(boost(&xs, &ys, d, config))
}

/// Boosts after choosing a grid configuration by 3-fold cross-validated MSE.
pub fn fit_regressor(x: ArrayView2<'_, f64>, y: &[f64], seed: u64) -> Result<Regressor> {
    check_inputs(x, y)?;
    let n = y.len();
    let d = x.ncols();
    let flat = gather(x, &(0..n).collect::<Vec<_>>());
    let order = canonical_order(&flat, y, d);
    let xs = gather(x, &order);
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    if ys.iter().all(|&v| v == ys[0]) {
        return Ok(Regressor::constant(ys[0]));
    }
    if n < 6 * GRID[0].min_leaf {
        return Ok(boost(&xs, &ys, d, NUISANCE));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, domain::FOLDS, 0));
    let mut fold = vec![0usize; n];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % CV_FOLDS;
    }

    let mut best = (f64::INFINITY, NUISANCE);
    for config in GRID {
        let mut sse = 0.0;
        for f in 0..CV_FOLDS {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let mut xt = Vec::with_capacity(train.len() * d);
            for &i in &train {
                xt.extend_from_slice(&xs[i * d..(i + 1) * d]);
            }
            let yt: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
            let model = boost(&xt, &yt, d, config);
            sse += (0..n)
                .filter(|&i| fold[i] == f)
                .map(|i| (model.predict(&xs[i * d..(i + 1) * d]) - ys[i]).powi(2))
                .sum::<f64>();
        }
        if sse < best.0 {
            best = (sse, config);
        }
    }
    Ok(boost(&xs, &ys, d, best.1))
}
