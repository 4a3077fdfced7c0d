//! Histogram-binned regression trees shared by every tree learner.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MAX_BINS: usize = 64;
const LEAF: u32 = u32::MAX;

/// Per-feature split thresholds. A value `x` falls in bin `#{t : x > t}`.
#[derive(Debug, Clone)]
pub struct Binner {
    thresholds: Vec<Vec<f64>>,
}

impl Binner {
    /// Quantile thresholds from the training columns of a row-major matrix.
    pub fn fit(x: &[f64], n: usize, d: usize) -> Self {
        let thresholds = (0..d)
            .map(|j| {
                let mut col: Vec<f64> = (0..n).map(|i| x[i * d + j]).collect();
                col.sort_by(f64::total_cmp);
                col.dedup();
                if col.len() <= MAX_BINS {
                    col.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let mut t: Vec<f64> = (1..MAX_BINS)
                        .map(|b| {
                            let pos = b * (col.len() - 1) / MAX_BINS;
                            0.5 * (col[pos] + col[pos + 1])
                        })
                        .collect();
                    t.dedup();
                    t
                }
            })
            .collect();
        Self { thresholds }
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn bins(&self, feature: usize) -> usize {
        self.thresholds[feature].len() + 1
    }

    pub fn threshold(&self, feature: usize, bin: usize) -> f64 {
        self.thresholds[feature][bin]
    }

    /// Column-major bin codes.
    pub fn transform(&self, x: &[f64], n: usize) -> BinnedMatrix {
        let d = self.n_features();
        let mut codes = vec![0u8; n * d];
        for j in 0..d {
            let t = &self.thresholds[j];
            for i in 0..n {
                let v = x[i * d + j];
                codes[j * n + i] = t.partition_point(|&th| v > th) as u8;
            }
        }
        BinnedMatrix { codes, n, d }
    }
}

#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    codes: Vec<u8>,
    n: usize,
    d: usize,
}

impl BinnedMatrix {
    #[inline]
    pub fn code(&self, row: usize, feature: usize) -> usize {
        self.codes[feature * self.n + row] as usize
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.d
    }
}

/// Flat node storage; children are indices into the same vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NodeArray", into = "NodeArray")]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
    /// Rows that reached the node while its value was estimated.
    pub count: u32,
}

/// `[feature, threshold, left, right, value, count]`, with `feature = -1` for leaves.
#[derive(Serialize, Deserialize)]
struct NodeArray(i64, f64, u32, u32, f64, u32);

impl From<NodeArray> for Node {
    fn from(a: NodeArray) -> Self {
        Node {
            feature: if a.0 < 0 { LEAF } else { a.0 as u32 },
            threshold: a.1,
            left: a.2,
            right: a.3,
            value: a.4,
            count: a.5,
        }
    }
}

impl From<Node> for NodeArray {
    fn from(n: Node) -> Self {
        let f = if n.feature == LEAF {
            -1
        } else {
            i64::from(n.feature)
        };
        NodeArray(f, n.threshold, n.left, n.right, n.value, n.count)
    }
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node {
                feature: LEAF,
                threshold: 0.0,
                left: 0,
                right: 0,
                value,
                count: 0,
            }],
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if x[n.feature as usize] <= n.threshold {
                n.left
            } else {
                n.right
            } as usize;
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    /// Node path from the root to the leaf reached by `x`.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut out = vec![0];
        let mut i = 0;
        while !self.nodes[i].is_leaf() {
            let n = &self.nodes[i];
            i = if x[n.feature as usize] <= n.threshold {
                n.left
            } else {
                n.right
            } as usize;
            out.push(i);
        }
        out
    }

    /// Split bin of every internal node, for routing binned rows.
    pub fn split_bins(&self, binner: &Binner) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|n| {
                if n.is_leaf() {
                    0
                } else {
                    // code <= b  <=>  value <= threshold(b) for the chosen bin b
                    binner.thresholds[n.feature as usize].partition_point(|&t| t < n.threshold)
                }
            })
            .collect()
    }

    /// Leaf reached by a binned training row, given [`Tree::split_bins`].
    pub fn leaf_of_binned(&self, bins: &[usize], m: &BinnedMatrix, row: usize) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if m.code(row, n.feature as usize) <= bins[i] {
                n.left
            } else {
                n.right
            } as usize;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per node; `None` tries all.
    pub mtry: Option<usize>,
}

/// Supplies node targets and leaf values to the generic grower.
pub trait NodeObjective: Sync {
    /// Split targets for the rows of a node; splits maximise the reduction in
    /// squared error of these targets.
    fn targets(&self, rows: &[u32]) -> Vec<f64>;
    fn leaf_value(&self, rows: &[u32]) -> f64;
    /// True when a row's target does not depend on the node it sits in.
    fn per_row_targets(&self) -> bool {
        false
    }
}

/// Fixed per-row targets with mean leaves.
pub struct SquaredError<'a>(pub &'a [f64]);

impl NodeObjective for SquaredError<'_> {
    fn targets(&self, rows: &[u32]) -> Vec<f64> {
        rows.iter().map(|&r| self.0[r as usize]).collect()
    }

    fn per_row_targets(&self) -> bool {
        true
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|&r| self.0[r as usize]).sum::<f64>() / rows.len() as f64
    }
}

struct Split {
    feature: usize,
    bin: usize,
    gain: f64,
}

/// Per-bin target sums and row counts of one feature.
#[derive(Clone)]
struct Histogram {
    sum: [f64; MAX_BINS],
    cnt: [u32; MAX_BINS],
}

impl Histogram {
    fn build(m: &BinnedMatrix, feature: usize, rows: &[u32], targets: &[f64]) -> Self {
        let mut h = Histogram {
            sum: [0.0; MAX_BINS],
            cnt: [0; MAX_BINS],
        };
        let codes = &m.codes[feature * m.n..(feature + 1) * m.n];
        for (&r, &t) in rows.iter().zip(targets) {
            let c = codes[r as usize] as usize;
            h.sum[c] += t;
            h.cnt[c] += 1;
        }
        h
    }

    fn minus(&self, other: &Histogram) -> Histogram {
        let mut h = self.clone();
        for b in 0..MAX_BINS {
            h.sum[b] -= other.sum[b];
            h.cnt[b] -= other.cnt[b];
        }
        h
    }

    fn best_split(&self, bins: usize, feature: usize, n: usize, min_leaf: usize) -> Option<Split> {
        let total: f64 = self.sum[..bins].iter().sum();
        let parent = total * total / n as f64;
        let mut best: Option<Split> = None;
        let (mut sl, mut nl) = (0.0, 0usize);
        for b in 0..bins.saturating_sub(1) {
            sl += self.sum[b];
            nl += self.cnt[b] as usize;
            let nr = n - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature,
                    bin: b,
                    gain,
                });
            }
        }
        best
    }
}

fn histograms<O: NodeObjective>(
    m: &BinnedMatrix,
    features: &[usize],
    rows: &[u32],
    objective: &O,
) -> Vec<Histogram> {
    let targets = objective.targets(rows);
    if rows.len() * features.len() > 50_000 {
        features
            .par_iter()
            .map(|&f| Histogram::build(m, f, rows, &targets))
            .collect()
    } else {
        features
            .iter()
            .map(|&f| Histogram::build(m, f, rows, &targets))
            .collect()
    }
}

/// Grows one tree over `rows`. Feature subsets come from `rng` when `mtry` is set.
pub fn grow<O: NodeObjective, R: Rng>(
    binner: &Binner,
    m: &BinnedMatrix,
    rows: Vec<u32>,
    objective: &O,
    params: GrowParams,
    rng: &mut R,
) -> Tree {
    let mut nodes = Vec::new();
    grow_node(binner, m, rows, None, objective, params, rng, 0, &mut nodes);
    Tree { nodes }
}

/// `inherited` holds the node's histograms over every feature when the
/// parent derived them by subtraction.
#[allow(clippy::too_many_arguments)]
fn grow_node<O: NodeObjective, R: Rng>(
    binner: &Binner,
    m: &BinnedMatrix,
    rows: Vec<u32>,
    inherited: Option<Vec<Histogram>>,
    objective: &O,
    params: GrowParams,
    rng: &mut R,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(Node {
        feature: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: objective.leaf_value(&rows),
        count: rows.len() as u32,
    });
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf {
        return id;
    }
    let d = m.n_features();
    let features: Vec<usize> = match params.mtry {
        Some(k) if k < d => {
            let mut f = index::sample(rng, d, k.max(1)).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..d).collect(),
    };
    let hists = inherited.unwrap_or_else(|| histograms(m, &features, &rows, objective));
    let mut best: Option<Split> = None;
    for (h, &f) in hists.iter().zip(&features) {
        if let Some(s) = h.best_split(binner.bins(f), f, rows.len(), params.min_leaf) {
            if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                best = Some(s);
            }
        }
    }
    let Some(split) = best else {
        return id;
    };
    let (left, right): (Vec<u32>, Vec<u32>) = rows
        .into_iter()
        .partition(|&r| m.code(r as usize, split.feature) <= split.bin);
    let subtract = objective.per_row_targets()
        && features.len() == d
        && depth + 1 < params.max_depth
        && left.len().max(right.len()) >= 2 * params.min_leaf;
    let (lh, rh) = if subtract {
        let left_smaller = left.len() <= right.len();
        let small = histograms(
            m,
            &features,
            if left_smaller { &left } else { &right },
            objective,
        );
        let large: Vec<Histogram> = hists.iter().zip(&small).map(|(p, s)| p.minus(s)).collect();
        if left_smaller {
            (Some(small), Some(large))
        } else {
            (Some(large), Some(small))
        }
    } else {
        (None, None)
    };
    drop(hists);
    let l = grow_node(
        binner,
        m,
        left,
        lh,
        objective,
        params,
        rng,
        depth + 1,
        nodes,
    );
    let r = grow_node(
        binner,
        m,
        right,
        rh,
        objective,
        params,
        rng,
        depth + 1,
        nodes,
    );
    let node = &mut nodes[id as usize];
    node.feature = split.feature as u32;
    node.threshold = binner.threshold(split.feature, split.bin);
    node.left = l;
    node.right = r;
    id
}

/// Row permutation that sorts rows lexicographically by features, then target.
pub fn canonical_order(x: &[f64], y: &[f64], d: usize) -> Vec<usize> {
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let ra = &x[a * d..(a + 1) * d];
        let rb = &x[b * d..(b + 1) * d];
        ra.iter()
            .zip(rb)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, domain};

    #[test]
    fn binned_route_matches_raw_route() {
        let n = 500;
        let d = 3;
        let mut r = rng::stream(1, domain::TREE, 0);
        let x: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i * d] * 2.0 + x[i * d + 2]).collect();
        let binner = Binner::fit(&x, n, d);
        let m = binner.transform(&x, n);
        let rows: Vec<u32> = (0..n as u32).collect();
        let params = GrowParams {
            max_depth: 4,
            min_leaf: 5,
            mtry: None,
        };
        let tree = grow(&binner, &m, rows, &SquaredError(&y), params, &mut r);
        assert!(tree.nodes.len() > 1);
        let bins = tree.split_bins(&binner);
        for i in 0..n {
            assert_eq!(
                tree.leaf_of_binned(&bins, &m, i),
                tree.leaf_index(&x[i * d..(i + 1) * d])
            );
        }
    }

    #[test]
    fn node_arrays_round_trip() {
        let t = Tree::leaf(1.5);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[-1,0.0,0,0,1.5,0]]");
        let back: Tree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn few_distinct_values_split_between_them() {
        let x = vec![1.0, 1.0, 2.0, 3.0];
        let b = Binner::fit(&x, 4, 1);
        assert_eq!(b.bins(0), 3);
        assert_eq!(b.threshold(0, 0), 1.5);
        assert_eq!(b.threshold(0, 1), 2.5);
    }
}
