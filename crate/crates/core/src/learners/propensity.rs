//! Multiclass propensity model: softmax gradient boosting with a probability floor.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::boosting::{check_inputs, gather, BoostConfig, NUISANCE};
use super::tree::{canonical_order, grow, BinnedMatrix, Binner, GrowParams, NodeObjective, Tree};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Rows each class needs before a propensity model is fitted.
pub const MIN_CLASS_SUPPORT: usize = 10;
pub const DEFAULT_CLIP_FLOOR: f64 = 0.01;

/// Raises every probability to at least `floor` and rescales the rest so the
/// vector still sums to 1. Requires `floor · len ≤ 1`.
pub fn clip_and_renormalize(p: &mut [f64], floor: f64) {
    let k = p.len();
    if k == 0 {
        return;
    }
    let mut clipped = vec![false; k];
    loop {
        let fixed = clipped.iter().filter(|&&c| c).count();
        let free_mass: f64 = p
            .iter()
            .zip(&clipped)
            .filter(|(_, &c)| !c)
            .map(|(v, _)| *v)
            .sum();
        let budget = 1.0 - fixed as f64 * floor;
        let mut changed = false;
        for i in 0..k {
            if clipped[i] {
                continue;
            }
            let scaled = if free_mass > 0.0 {
                p[i] * budget / free_mass
            } else {
                budget / (k - fixed) as f64
            };
            if scaled < floor {
                clipped[i] = true;
                changed = true;
            }
        }
        if !changed {
            for i in 0..k {
                p[i] = if clipped[i] {
                    floor
                } else if free_mass > 0.0 {
                    p[i] * budget / free_mass
                } else {
                    budget / (k - fixed) as f64
                };
            }
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub n_classes: usize,
    pub clip_floor: f64,
    pub learning_rate: f64,
    pub initial_scores: Vec<f64>,
    /// `rounds[t][k]` is the class-`k` tree of boosting round `t`.
    pub rounds: Vec<Vec<Tree>>,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl PropensityModel {
    fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.initial_scores.clone();
        for round in &self.rounds {
            for (k, t) in round.iter().enumerate() {
                s[k] += self.learning_rate * t.predict(x);
            }
        }
        s
    }

    /// Clipped class probabilities.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut p = softmax(&self.raw_scores(x));
        clip_and_renormalize(&mut p, self.clip_floor);
        p
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }
}

/// Newton leaf values for one class of the softmax loss.
struct SoftmaxClass<'a> {
    gradient: &'a [f64],
    hessian: &'a [f64],
    scale: f64,
}

impl NodeObjective for SoftmaxClass<'_> {
    fn targets(&self, rows: &[u32]) -> Vec<f64> {
        rows.iter().map(|&r| self.gradient[r as usize]).collect()
    }

    fn per_row_targets(&self) -> bool {
        true
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.gradient[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hessian[r as usize]).sum();
        if h < 1e-12 {
            0.0
        } else {
            (self.scale * g / h).clamp(-4.0, 4.0)
        }
    }
}

/// Checks that each of `n_classes` classes has at least `required` rows.
pub fn check_support(actions: &[usize], n_classes: usize, required: usize) -> Result<()> {
    let mut counts = vec![0usize; n_classes];
    for &a in actions {
        if a >= n_classes {
            return Err(Error::Domain(format!("action class {a} out of range")));
        }
        counts[a] += 1;
    }
    for (class, &count) in counts.iter().enumerate() {
        if count < required {
            return Err(Error::InsufficientSupport {
                class,
                count,
                required,
            });
        }
    }
    Ok(())
}

pub fn fit_propensity(
    xc: ArrayView2<'_, f64>,
    actions: &[usize],
    n_classes: usize,
    clip_floor: f64,
) -> Result<PropensityModel> {
    fit_propensity_with(xc, actions, n_classes, clip_floor, NUISANCE)
}

pub fn fit_propensity_with(
    xc: ArrayView2<'_, f64>,
    actions: &[usize],
    n_classes: usize,
    clip_floor: f64,
    config: BoostConfig,
) -> Result<PropensityModel> {
    if !(clip_floor > 0.0 && clip_floor * n_classes as f64 <= 1.0) {
        return Err(Error::Domain(format!(
            "clip floor {clip_floor} is infeasible"
        )));
    }
    let y: Vec<f64> = actions.iter().map(|&a| a as f64).collect();
    check_inputs(xc, &y)?;
    check_support(actions, n_classes, MIN_CLASS_SUPPORT)?;
    let n = actions.len();
    let d = xc.ncols();
    let flat = gather(xc, &(0..n).collect::<Vec<_>>());
    let order = canonical_order(&flat, &y, d);
    let x = gather(xc, &order);
    let a: Vec<usize> = order.iter().map(|&i| actions[i]).collect();

    let binner = Binner::fit(&x, n, d);
    let m = binner.transform(&x, n);
    let params = GrowParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf.min((n / 8).max(2)),
        mtry: None,
    };
    let booster = Booster {
        binner: &binner,
        m: &m,
        actions: &a,
        n_classes,
        params,
        config,
    };
    // Rounds chosen by cross-validated log loss; folds interleave the
    // canonical row order.
    let mut cv_loss = vec![0.0; config.n_trees + 1];
    for fold in 0..CV_FOLDS {
        let (held, train): (Vec<u32>, Vec<u32>) =
            (0..n as u32).partition(|i| *i as usize % CV_FOLDS == fold);
        let (_, _, loss) = booster.train(&train, config.n_trees, &held);
        for (c, l) in cv_loss.iter_mut().zip(loss) {
            *c += l;
        }
    }
    let best = (0..cv_loss.len())
        .min_by(|&i, &j| cv_loss[i].total_cmp(&cv_loss[j]).then(i.cmp(&j)))
        .unwrap_or(0);
    let rows: Vec<u32> = (0..n as u32).collect();
    let (initial_scores, rounds, _) = booster.train(&rows, best, &[]);
    Ok(PropensityModel {
        n_classes,
        clip_floor,
        learning_rate: config.learning_rate,
        initial_scores,
        rounds,
    })
}

const CV_FOLDS: usize = 3;

struct Booster<'a> {
    binner: &'a Binner,
    m: &'a BinnedMatrix,
    actions: &'a [usize],
    n_classes: usize,
    params: GrowParams,
    config: BoostConfig,
}

impl Booster<'_> {
    /// Boosts `rounds` rounds on `train` and returns the initial scores, the
    /// trees and the mean log loss on `held` after each round (index 0 is
    /// the prior alone).
    fn train(
        &self,
        train: &[u32],
        rounds: usize,
        held: &[u32],
    ) -> (Vec<f64>, Vec<Vec<Tree>>, Vec<f64>) {
        let n = self.actions.len();
        let k_classes = self.n_classes;
        let mut counts = vec![0.0f64; k_classes];
        for &i in train {
            counts[self.actions[i as usize]] += 1.0;
        }
        let initial: Vec<f64> = counts
            .iter()
            .map(|&c| (c.max(0.5) / train.len() as f64).ln())
            .collect();
        let mut scores: Vec<Vec<f64>> = vec![initial.clone(); n];
        let log_loss = |scores: &[Vec<f64>]| -> f64 {
            if held.is_empty() {
                return 0.0;
            }
            held.iter()
                .map(|&i| {
                    -softmax(&scores[i as usize])[self.actions[i as usize]]
                        .max(1e-300)
                        .ln()
                })
                .sum::<f64>()
                / held.len() as f64
        };
        let mut losses = vec![log_loss(&scores)];
        let scale = (k_classes as f64 - 1.0) / k_classes as f64;
        let mut unused = rng::stream(0, domain::TREE, 0);
        let mut gradient = vec![0.0; n];
        let mut hessian = vec![0.0; n];
        let mut out = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let probs: Vec<Vec<f64>> = train
                .iter()
                .map(|&i| softmax(&scores[i as usize]))
                .collect();
            let mut round = Vec::with_capacity(k_classes);
            for k in 0..k_classes {
                for (j, &i) in train.iter().enumerate() {
                    let p = probs[j][k];
                    gradient[i as usize] = f64::from(self.actions[i as usize] == k) - p;
                    hessian[i as usize] = p * (1.0 - p);
                }
                let obj = SoftmaxClass {
                    gradient: &gradient,
                    hessian: &hessian,
                    scale,
                };
                let tree = grow(
                    self.binner,
                    self.m,
                    train.to_vec(),
                    &obj,
                    self.params,
                    &mut unused,
                );
                let bins = tree.split_bins(self.binner);
                for &i in train.iter().chain(held) {
                    let leaf = tree.leaf_of_binned(&bins, self.m, i as usize);
                    scores[i as usize][k] += self.config.learning_rate * tree.nodes[leaf].value;
                }
                round.push(tree);
            }
            out.push(round);
            losses.push(log_loss(&scores));
        }
        (initial, out, losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn water_filling_example() {
        let mut p = [0.0, 0.5, 0.5];
        clip_and_renormalize(&mut p, 0.1);
        assert_eq!(p[0], 0.1);
        assert!((p[1] - 0.45).abs() < 1e-15 && (p[2] - 0.45).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clipped_vectors_are_distributions(raw in proptest::collection::vec(0.0f64..1.0, 2..8),
                                             floor in 0.001f64..0.1) {
            let z: f64 = raw.iter().sum::<f64>() + 1e-9;
            let mut p: Vec<f64> = raw.iter().map(|v| v / z).collect();
            prop_assume!(floor * p.len() as f64 <= 1.0);
            clip_and_renormalize(&mut p, floor);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v >= floor - 1e-12));
        }
    }

    #[test]
    fn balanced_independent_classes() {
        let n = 20_000;
        let mut r = rng::stream(3, domain::TREE, 3);
        let x = Array2::from_shape_fn((n, 3), |_| r.random::<f64>());
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let m = fit_propensity(x.view(), &a, 4, DEFAULT_CLIP_FLOOR).unwrap();
        let probe = Array2::from_shape_fn((500, 3), |_| r.random::<f64>());
        for p in m.predict_rows(probe.view()) {
            for v in p {
                assert!((v - 0.25).abs() <= 0.03, "{v}");
            }
        }
    }

    #[test]
    fn missing_class_is_insufficient_support() {
        let x = Array2::from_shape_fn((100, 1), |(i, _)| i as f64);
        let a: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert!(matches!(
            fit_propensity(x.view(), &a, 3, 0.01),
            Err(Error::InsufficientSupport {
                class: 2,
                count: 0,
                ..
            })
        ));
    }

    #[test]
    fn predictions_respect_floor() {
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let a: Vec<usize> = (0..n).map(|i| if i < 40 { 1 } else { 0 }).collect();
        let m = fit_propensity(x.view(), &a, 2, 0.01).unwrap();
        for v in [-10.0, 0.0, 20.0, 200.0, 1e6] {
            let p = m.predict(&[v]);
            assert!(p.iter().all(|&q| q >= 0.01));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
