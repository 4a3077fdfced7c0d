//! Subsampled regression forests and honest causal forests.

use ndarray::ArrayView2;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boosting::{check_inputs, gather};
use super::tree::{canonical_order, grow, Binner, GrowParams, NodeObjective, SquaredError, Tree};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub sample_fraction: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_leaf: 20,
            max_depth: 12,
            sample_fraction: 0.5,
        }
    }
}

fn mtry_sqrt(d: usize) -> usize {
    ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Prepared {
    x: Vec<f64>,
    n: usize,
    d: usize,
    order: Vec<usize>,
    binner: Binner,
}

fn prepare(x: ArrayView2<'_, f64>, key: &[f64]) -> Prepared {
    let n = x.nrows();
    let d = x.ncols();
    let flat = gather(x, &(0..n).collect::<Vec<_>>());
    let order = canonical_order(&flat, key, d);
    let xs = gather(x, &order);
    let binner = Binner::fit(&xs, n, d);
    Prepared {
        x: xs,
        n,
        d,
        order,
        binner,
    }
}

/// Regression forest with `⌈d/3⌉` features tried per split.
pub fn fit_random_forest(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: ForestConfig,
    seed: u64,
) -> Result<RandomForest> {
    check_inputs(x, y)?;
    let p = prepare(x, y);
    let ys: Vec<f64> = p.order.iter().map(|&i| y[i]).collect();
    let m = p.binner.transform(&p.x, p.n);
    let take = ((p.n as f64 * config.sample_fraction) as usize).clamp(1, p.n);
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf.min((p.n / 8).max(1)),
        mtry: Some(p.d.div_ceil(3).max(1)),
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, domain::TREE, t as u64);
            let mut rows: Vec<u32> = index::sample(&mut r, p.n, take)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            rows.sort_unstable();
            grow(&p.binner, &m, rows, &SquaredError(&ys), params, &mut r)
        })
        .collect();
    Ok(RandomForest { trees })
}

/// Estimation rows a node needs before its effect estimate is used.
pub const MIN_ESTIMATION_ROWS: u32 = 5;

/// Splits on the pseudo-outcome `w̃ (ỹ − w̃ τ_parent)`.
struct EffectSplit<'a> {
    y: &'a [f64],
    w: &'a [f64],
}

impl NodeObjective for EffectSplit<'_> {
    fn targets(&self, rows: &[u32]) -> Vec<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for &r in rows {
            let (y, w) = (self.y[r as usize], self.w[r as usize]);
            num += w * y;
            den += w * w;
        }
        let tau = if den > 1e-12 { num / den } else { 0.0 };
        rows.iter()
            .map(|&r| {
                let (y, w) = (self.y[r as usize], self.w[r as usize]);
                w * (y - w * tau)
            })
            .collect()
    }

    fn leaf_value(&self, _rows: &[u32]) -> f64 {
        0.0
    }
}

/// Honest causal forest for a binary treatment on residualised data.
/// Node values are estimated from rows disjoint from the ones that chose the
/// splits; `count` is the number of those estimation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestForest {
    pub trees: Vec<Tree>,
}

impl HonestForest {
    fn tree_estimate(tree: &Tree, x: &[f64]) -> f64 {
        let mut value = 0.0;
        for i in tree.path(x) {
            let n = &tree.nodes[i];
            if n.count >= MIN_ESTIMATION_ROWS && n.value.is_finite() {
                value = n.value;
            } else {
                break;
            }
        }
        value
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees
            .iter()
            .map(|t| Self::tree_estimate(t, x))
            .sum::<f64>()
            / self.trees.len() as f64
    }
}

/// Fills node values with `Σ w̃ỹ / Σ w̃²` over the estimation rows reaching each
/// node. Contributions are summed in sorted order, so the estimates do not
/// depend on the order of the estimation rows.
pub fn estimate_nodes(tree: &mut Tree, x: &[f64], d: usize, rows: &[u32], y: &[f64], w: &[f64]) {
    let mut contrib: Vec<Vec<(f64, f64)>> = vec![Vec::new(); tree.nodes.len()];
    for &r in rows {
        let r = r as usize;
        let (yy, ww) = (y[r], w[r]);
        for i in tree.path(&x[r * d..(r + 1) * d]) {
            contrib[i].push((ww * yy, ww * ww));
        }
    }
    for (node, mut c) in tree.nodes.iter_mut().zip(contrib) {
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let num: f64 = c.iter().map(|v| v.0).sum();
        let den: f64 = c.iter().map(|v| v.1).sum();
        node.count = c.len() as u32;
        node.value = if den > 1e-9 { num / den } else { f64::NAN };
    }
}

/// Fits an honest forest on residualised outcomes `y_tilde` and treatments
/// `w_tilde`. Each tree draws half the rows, grows on one half of the draw and
/// estimates on the other.
pub fn fit_honest_forest(
    x: ArrayView2<'_, f64>,
    y_tilde: &[f64],
    w_tilde: &[f64],
    config: ForestConfig,
    seed: u64,
) -> Result<HonestForest> {
    check_inputs(x, y_tilde)?;
    if w_tilde.len() != y_tilde.len() || w_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::InconsistentInput("treatment residuals".into()));
    }
    let key: Vec<f64> = y_tilde
        .iter()
        .zip(w_tilde)
        .map(|(a, b)| a * 1e3 + b)
        .collect();
    let p = prepare(x, &key);
    let ys: Vec<f64> = p.order.iter().map(|&i| y_tilde[i]).collect();
    let ws: Vec<f64> = p.order.iter().map(|&i| w_tilde[i]).collect();
    let m = p.binner.transform(&p.x, p.n);
    let take = ((p.n as f64 * config.sample_fraction) as usize).clamp(2, p.n);
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        mtry: Some(mtry_sqrt(p.d)),
    };
    let objective = EffectSplit { y: &ys, w: &ws };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, domain::TREE, t as u64);
            let draw: Vec<u32> = index::sample(&mut r, p.n, take)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let half = draw.len() / 2;
            let mut structure = draw[..half].to_vec();
            let mut estimation = draw[half..].to_vec();
            structure.sort_unstable();
            estimation.sort_unstable();
            let mut tree = grow(&p.binner, &m, structure, &objective, params, &mut r);
            estimate_nodes(&mut tree, &p.x, p.d, &estimation, &ys, &ws);
            tree
        })
        .collect();
    Ok(HonestForest { trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn estimation_order_does_not_change_estimates() {
        let n = 400;
        let d = 2;
        let mut r = rng::stream(2, domain::TREE, 2);
        let x: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let binner = Binner::fit(&x, n, d);
        let m = binner.transform(&x, n);
        let structure: Vec<u32> = (0..200).collect();
        let params = GrowParams {
            max_depth: 3,
            min_leaf: 10,
            mtry: None,
        };
        let tree = grow(
            &binner,
            &m,
            structure,
            &EffectSplit { y: &y, w: &w },
            params,
            &mut r,
        );
        let mut est: Vec<u32> = (200..400).collect();
        let mut a = tree.clone();
        estimate_nodes(&mut a, &x, d, &est, &y, &w);
        est.shuffle(&mut r);
        let mut b = tree;
        estimate_nodes(&mut b, &x, d, &est, &y, &w);
        assert_eq!(a, b);
    }

    #[test]
    fn recovers_constant_effect() {
        let n = 4000;
        let mut r = rng::stream(4, domain::TREE, 4);
        let x = Array2::from_shape_fn((n, 3), |_| r.random::<f64>());
        let w: Vec<f64> = (0..n)
            .map(|_| f64::from(r.random_bool(0.5)) - 0.5)
            .collect();
        let y: Vec<f64> = w
            .iter()
            .map(|wi| 0.3 * wi + 0.05 * (r.random::<f64>() - 0.5))
            .collect();
        let f = fit_honest_forest(
            x.view(),
            &y,
            &w,
            ForestConfig {
                n_trees: 50,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        for i in 0..20 {
            let p = f.predict(&x.row(i).to_vec());
            assert!((p - 0.3).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn forest_fits_step() {
        let n = 3000;
        let mut r = rng::stream(6, domain::TREE, 6);
        let x = Array2::from_shape_fn((n, 2), |_| r.random::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|i| if x[[i, 0]] > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let f = fit_random_forest(x.view(), &y, ForestConfig::default(), 3).unwrap();
        assert!(f.predict(&[0.9, 0.5]) > 0.9);
        assert!(f.predict(&[0.1, 0.5]) < 0.1);
    }
}
