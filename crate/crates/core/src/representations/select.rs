use ndarray::Array2;
use rand::seq::SliceRandom;

use super::actions::{clinical_class, MESSAGE_CLASSES};
use crate::error::{Error, Result};
use crate::features::{Feature, FEATURE_COUNT};
use crate::learners::boosting::fit_regressor;
use crate::rng::{self, domain};
use crate::sim::LoggedRow;

/// Size of the model-selected state subset.
pub const DEFAULT_TOP_K: usize = 14;

/// Ranks the clinical features by permutation importance in a boosted model of
/// the observed reward given the features and the clinical action class, and
/// returns the `top_k` most important. Ties keep the column order.
pub fn select_state_features(rows: &[LoggedRow], top_k: usize, seed: u64) -> Result<Vec<Feature>> {
    if top_k > FEATURE_COUNT {
        return Err(Error::TopKTooLarge {
            requested: top_k,
            available: FEATURE_COUNT,
        });
    }
    let n = rows.len();
    let width = FEATURE_COUNT + MESSAGE_CLASSES;
    let mut x = Array2::zeros((n, width));
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.features.values().iter().enumerate() {
            x[[i, j]] = v;
        }
        if r.action.is_message() {
            let class = clinical_class(&r.action.labels).id();
            x[[i, FEATURE_COUNT + class - 1]] = 1.0;
        }
    }
    let y: Vec<f64> = rows.iter().map(|r| r.reward).collect();
    let model = fit_regressor(x.view(), &y, seed)?;
    let mse = |m: &Array2<f64>| -> f64 {
        model
            .predict_rows(m.view())
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64
    };
    let base = mse(&x);
    let mut importance: Vec<(usize, f64)> = (0..FEATURE_COUNT)
        .map(|j| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::stream(seed, domain::PERMUTATION, j as u64));
            let mut xp = x.clone();
            for (i, &p) in perm.iter().enumerate() {
                xp[[i, j]] = x[[p, j]];
            }
            (j, mse(&xp) - base)
        })
        .collect();
    importance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(importance
        .into_iter()
        .take(top_k)
        .map(|(j, _)| Feature::ALL[j])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ClinicalFeatures;
    use crate::sim::action::sample_labels;
    use crate::sim::{ActionClass, EmbeddingGenerator, RawAction};
    use rand::Rng;

    /// Rows with independent random features whose reward depends only on
    /// high_7dr, low_7dr and using_pump through the action's effect.
    fn rows(n: usize, seed: u64) -> Vec<LoggedRow> {
        let mut r = rng::stream(seed, domain::LOGGING, 0);
        let gen = EmbeddingGenerator::default();
        (0..n)
            .map(|i| {
                let values: Vec<f64> = (0..FEATURE_COUNT).map(|_| r.random::<f64>()).collect();
                let mut features = ClinicalFeatures::from_values(values).unwrap();
                features.set(Feature::UsingPump, f64::from(r.random_bool(0.5)));
                let class = ActionClass::from_id(r.random_range(0..5)).unwrap();
                let action = if class == ActionClass::Control {
                    RawAction::control()
                } else {
                    RawAction {
                        class_label: class,
                        labels: sample_labels(class, &mut r),
                        embedding: gen.sample(class, &mut r),
                    }
                };
                let high = features.get(Feature::High7dr);
                let low = features.get(Feature::Low7dr);
                let pump = features.get(Feature::UsingPump);
                let effect = match class {
                    ActionClass::HighsOnly => high * (2.0 - pump),
                    ActionClass::LowsOnly => low,
                    ActionClass::HighsAndLows => 0.8 * (high * (2.0 - pump) + low),
                    _ => 0.0,
                };
                LoggedRow {
                    patient_id: i as u32,
                    day: 14,
                    features,
                    action,
                    reward: effect + 0.02 * (r.random::<f64>() - 0.5),
                }
            })
            .collect()
    }

    #[test]
    fn effect_drivers_rank_in_top_five() {
        let data = rows(6000, 1);
        let top = select_state_features(&data, 5, 2).unwrap();
        for f in [Feature::High7dr, Feature::Low7dr, Feature::UsingPump] {
            assert!(top.contains(&f), "{f} missing from {top:?}");
        }
        assert_eq!(top, select_state_features(&data, 5, 2).unwrap());
    }

    #[test]
    fn full_top_k_returns_every_feature() {
        let data = rows(300, 3);
        let mut all = select_state_features(&data, FEATURE_COUNT, 1).unwrap();
        assert_eq!(all.len(), FEATURE_COUNT);
        all.sort();
        assert_eq!(all, Feature::ALL.to_vec());
        assert!(matches!(
            select_state_features(&data, FEATURE_COUNT + 1, 1),
            Err(Error::TopKTooLarge { .. })
        ));
    }
}
