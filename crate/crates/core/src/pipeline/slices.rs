//! CATE of the optimal message as a function of single clinician features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Feature;
use crate::sim::LoggedRow;

pub const SLICE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    /// Mean feature value in the bin.
    pub x: f64,
    pub mean_cate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub feature: String,
    pub points: Vec<SlicePoint>,
    /// Spearman correlation between the feature and the row-level CATE.
    pub spearman: f64,
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// The highest predicted effect over the message actions of each row.
pub fn optimal_message_cate(effects: &[Vec<f64>]) -> Vec<f64> {
    effects
        .iter()
        .map(|e| e.iter().skip(1).copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Binned CATE-vs-feature curves: one point per distinct value for binary
/// features, otherwise `SLICE_BINS` equal-count bins.
pub fn report_cate_slices(
    rows: &[&LoggedRow],
    cate: &[f64],
    features: &[String],
) -> Result<Vec<Slice>> {
    if rows.len() != cate.len() {
        return Err(Error::InconsistentInput(
            "one CATE value per row is required".into(),
        ));
    }
    features
        .iter()
        .map(|name| {
            let f = Feature::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown feature {name:?}")))?;
            let x: Vec<f64> = rows.iter().map(|r| r.features.get(f)).collect();
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let binary = x.iter().all(|&v| v == 0.0 || v == 1.0);
            let groups: Vec<Vec<usize>> = if binary {
                [0.0, 1.0]
                    .iter()
                    .map(|&v| {
                        order
                            .iter()
                            .copied()
                            .filter(|&i| x[i] == v)
                            .collect::<Vec<_>>()
                    })
                    .filter(|g| !g.is_empty())
                    .collect()
            } else {
                let bins = SLICE_BINS.min(order.len()).max(1);
                (0..bins)
                    .map(|b| order[b * order.len() / bins..(b + 1) * order.len() / bins].to_vec())
                    .filter(|g| !g.is_empty())
                    .collect()
            };
            let points = groups
                .iter()
                .map(|g| SlicePoint {
                    x: g.iter().map(|&i| x[i]).sum::<f64>() / g.len() as f64,
                    mean_cate: g.iter().map(|&i| cate[i]).sum::<f64>() / g.len() as f64,
                    n: g.len(),
                })
                .collect();
            Ok(Slice {
                feature: name.clone(),
                points,
                spearman: spearman(&x, cate),
            })
        })
        .collect()
}

/// Slices as CSV: `feature,x,mean_cate,n`.
pub fn slices_csv(slices: &[Slice]) -> String {
    let mut s = String::from("feature,x,mean_cate,n\n");
    for sl in slices {
        for p in &sl.points {
            s.push_str(&format!("{},{},{},{}\n", sl.feature, p.x, p.mean_cate, p.n));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sample_cohort, simulate_panel};

    #[test]
    fn spearman_of_monotone_maps() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[3.0, 2.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 4]), 0.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn constant_model_gives_flat_slices() {
        let panel = simulate_panel(&sample_cohort(20, 1), 42, 1.0, 1).unwrap();
        let rows: Vec<&LoggedRow> = panel.rows().iter().collect();
        let cate = vec![0.02; rows.len()];
        let slices =
            report_cate_slices(&rows, &cate, &crate::pipeline::config::default_slices()).unwrap();
        assert_eq!(slices.len(), 4);
        for s in &slices {
            assert!(s.points.iter().all(|p| (p.mean_cate - 0.02).abs() < 1e-12));
            assert_eq!(s.spearman, 0.0);
        }
        let pump = &slices[3];
        assert!(pump.points.len() <= 2);
        assert!(matches!(
            report_cate_slices(&rows, &cate, &["bogus".into()]),
            Err(Error::Config(_))
        ));
    }
}
