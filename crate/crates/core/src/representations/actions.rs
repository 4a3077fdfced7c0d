//! Action representations: the clinical grouping rules and k-means clusters of
//! message embeddings. Class 0 is control under both schemes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::sim::{ActionClass, MessageLabels, RawAction, EMBEDDING_DIM};

/// Non-control classes under either scheme.
pub const MESSAGE_CLASSES: usize = 4;
pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionScheme {
    ClinicalRules,
    Kmeans,
}

impl ActionScheme {
    pub const ALL: [ActionScheme; 2] = [ActionScheme::ClinicalRules, ActionScheme::Kmeans];

    pub fn name(self) -> &'static str {
        match self {
            ActionScheme::ClinicalRules => "clinical_rules",
            ActionScheme::Kmeans => "kmeans",
        }
    }
}

impl fmt::Display for ActionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown action scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRep {
    pub scheme: ActionScheme,
    pub class_id: usize,
    pub k: usize,
}

/// Clinical class of a sent message from its labels.
pub fn clinical_class(labels: &MessageLabels) -> ActionClass {
    let lows = labels.recommendations_target_low_glucose;
    let highs = labels.treats_highs();
    match (lows, highs) {
        (true, true) => ActionClass::HighsAndLows,
        (false, true) => ActionClass::HighsOnly,
        (true, false) => ActionClass::LowsOnly,
        (false, false) => ActionClass::Other,
    }
}

/// Applies the grouping rules to a message's labels; `None` means no message.
pub fn action_representation_clinical(labels: Option<&MessageLabels>) -> ActionRep {
    ActionRep {
        scheme: ActionScheme::ClinicalRules,
        class_id: labels.map_or(0, |l| clinical_class(l).id()),
        k: MESSAGE_CLASSES,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeansModel {
    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    /// Class id of a message embedding: nearest centroid index plus one.
    pub fn assign(&self, embedding: &[f64]) -> usize {
        self.nearest(embedding) + 1
    }
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn fit_kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansModel> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::TooFewRows {
            required: k.max(1),
            got: n,
        });
    }
    let mut rng = rng::stream(seed, domain::KMEANS, 0);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let mut model = KMeansModel {
        centroids,
        seed,
        inertia: 0.0,
        inertia_trace: Vec::new(),
    };
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| model.nearest(p)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&new, &model.centroids[j]).sqrt());
            model.centroids[j] = new;
        }
        labels = points.iter().map(|p| model.nearest(p)).collect();
        model
            .inertia_trace
            .push(inertia(points, &model.centroids, &labels));
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    model.inertia = inertia(points, &model.centroids, &labels);
    Ok(model)
}

pub fn embedding_f64(e: &[f32; EMBEDDING_DIM]) -> Vec<f64> {
    e.iter().map(|&v| f64::from(v)).collect()
}

/// Fitted action map `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum ActionEncoder {
    ClinicalRules,
    Kmeans { model: KMeansModel },
}

impl ActionEncoder {
    pub fn scheme(&self) -> ActionScheme {
        match self {
            ActionEncoder::ClinicalRules => ActionScheme::ClinicalRules,
            ActionEncoder::Kmeans { .. } => ActionScheme::Kmeans,
        }
    }

    /// Number of action ids, control included.
    pub fn n_actions(&self) -> usize {
        MESSAGE_CLASSES + 1
    }

    pub fn encode(&self, action: &RawAction) -> usize {
        if !action.is_message() {
            return 0;
        }
        match self {
            ActionEncoder::ClinicalRules => clinical_class(&action.labels).id(),
            ActionEncoder::Kmeans { model } => model.assign(&embedding_f64(&action.embedding)),
        }
    }

    pub fn represent(&self, action: &RawAction) -> ActionRep {
        ActionRep {
            scheme: self.scheme(),
            class_id: self.encode(action),
            k: MESSAGE_CLASSES,
        }
    }

    /// Fits the encoder for `scheme` on training actions; control rows are ignored.
    pub fn fit<'a, I>(scheme: ActionScheme, actions: I, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawAction>,
    {
        match scheme {
            ActionScheme::ClinicalRules => Ok(ActionEncoder::ClinicalRules),
            ActionScheme::Kmeans => {
                let points: Vec<Vec<f64>> = actions
                    .into_iter()
                    .filter(|a| a.is_message())
                    .map(|a| embedding_f64(&a.embedding))
                    .collect();
                Ok(ActionEncoder::Kmeans {
                    model: fit_kmeans(&points, MESSAGE_CLASSES, seed)?,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::action::sample_labels;
    use rand_distr::{Distribution, Normal};

    fn labels(low: bool, high: bool) -> MessageLabels {
        MessageLabels {
            recommendations_target_low_glucose: low,
            recommendations_target_high_glucose_or_low_time_in_range: high,
            ..Default::default()
        }
    }

    #[test]
    fn grouping_rules() {
        let rep = |l: MessageLabels| action_representation_clinical(Some(&l)).class_id;
        assert_eq!(rep(labels(true, true)), ActionClass::HighsAndLows.id());
        assert_eq!(rep(labels(false, true)), ActionClass::HighsOnly.id());
        assert_eq!(rep(labels(true, false)), ActionClass::LowsOnly.id());
        assert_eq!(rep(MessageLabels::default()), ActionClass::Other.id());
        let bolus = MessageLabels {
            reminds_patient_to_bolus: true,
            ..Default::default()
        };
        assert_eq!(rep(bolus), ActionClass::HighsOnly.id());
        assert_eq!(action_representation_clinical(None).class_id, 0);
    }

    #[test]
    fn sampled_labels_map_back_to_their_class() {
        let mut r = rng::stream(1, domain::EMBEDDING, 5);
        for class in ActionClass::ALL.into_iter().skip(1) {
            for _ in 0..200 {
                assert_eq!(clinical_class(&sample_labels(class, &mut r)), class);
            }
        }
    }

    #[test]
    fn every_label_set_fires_exactly_one_rule() {
        for bits in 0u32..(1 << 11) {
            let mut a = [false; 11];
            for (i, v) in a.iter_mut().enumerate() {
                *v = bits >> i & 1 == 1;
            }
            let l = MessageLabels::from_array(a);
            let fired = [
                l.recommendations_target_low_glucose && l.treats_highs(),
                !l.recommendations_target_low_glucose && l.treats_highs(),
                l.recommendations_target_low_glucose && !l.treats_highs(),
                !l.recommendations_target_low_glucose && !l.treats_highs(),
            ];
            assert_eq!(fired.iter().filter(|&&f| f).count(), 1);
            let expected = 1 + fired.iter().position(|&f| f).unwrap();
            assert_eq!(clinical_class(&l).id(), expected);
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut r = rng::stream(9, domain::KMEANS, 9);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for b in 0..4 {
            for _ in 0..100 {
                let p: Vec<f64> = (0..16)
                    .map(|j| if j == b { 10.0 } else { 0.0 } + noise.sample(&mut r))
                    .collect();
                points.push(p);
                truth.push(b);
            }
        }
        let m = fit_kmeans(&points, 4, 3).unwrap();
        let labels: Vec<usize> = points.iter().map(|p| m.nearest(p)).collect();
        for i in 0..points.len() {
            for j in 0..points.len() {
                assert_eq!(truth[i] == truth[j], labels[i] == labels[j]);
            }
        }
        for w in m.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let points = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let m = fit_kmeans(&points, 1, 1).unwrap();
        assert_eq!(m.centroids[0], vec![2.0, 4.0]);
    }

    #[test]
    fn centroid_point_maps_to_its_class() {
        let points = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.2]];
        let m = fit_kmeans(&points, 2, 4).unwrap();
        for (j, c) in m.centroids.iter().enumerate() {
            assert_eq!(m.assign(c), j + 1);
        }
        assert!(fit_kmeans(&points, 5, 1).is_err());
    }

    #[test]
    fn control_encodes_to_zero() {
        let points: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64; EMBEDDING_DIM]).collect();
        let enc = ActionEncoder::Kmeans {
            model: fit_kmeans(&points, 4, 1).unwrap(),
        };
        assert_eq!(enc.encode(&RawAction::control()), 0);
        assert_eq!(
            ActionEncoder::ClinicalRules.encode(&RawAction::control()),
            0
        );
    }
}
