//! ATT@K, targeting operator characteristic curves and patient bootstrap.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dr::DrScoreTable;
use crate::error::{Error, Result};
use crate::policy::{att_of_assignments, best_action, capacity_for, rank_order, Assignment};
use crate::rng::{self, domain};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const ATT_FRACTION: f64 = 0.25;

/// Default TOC grid `{0.05, 0.10, …, 1.0}`.
pub fn default_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

/// `(1/T) Σ_t (1/K) Σ_i Γ̂_it(π_i)` for per-day assignments.
pub fn estimate_att(assignments: &[Assignment], table: &DrScoreTable, k: usize) -> Result<f64> {
    att_of_assignments(assignments, k, |p, d, a| table.score(p, d, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// A point estimate with its bootstrap percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn interval(&self) -> Interval {
        Interval {
            lo: self.lo,
            hi: self.hi,
        }
    }

    pub fn half_width(&self) -> f64 {
        self.interval().half_width()
    }

    /// `point [95% CI: lo-hi]` with values multiplied by `scale`.
    pub fn display(&self, scale: f64, level: f64) -> String {
        let (p, lo, hi) = (self.point * scale, self.lo * scale, self.hi * scale);
        let pct = (level * 100.0).round();
        if lo < 0.0 {
            format!("{p:.1} [{pct}% CI: {lo:.1} to {hi:.1}]")
        } else {
            format!("{p:.1} [{pct}% CI: {lo:.1}-{hi:.1}]")
        }
    }
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Patient multiplicities of replicate `b`: `n` draws with replacement.
pub fn resample_counts(n: usize, seed: u64, b: usize) -> Vec<u32> {
    let mut r = rng::stream(seed, domain::BOOTSTRAP, b as u64);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[r.random_range(0..n)] += 1;
    }
    counts
}

/// Replicates of a vector-valued statistic of the patient multiplicities.
pub fn bootstrap_replicates<F>(
    n_units: usize,
    b: usize,
    seed: u64,
    stat: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[u32]) -> Vec<f64> + Sync,
{
    if n_units < 2 {
        return Err(Error::TooFewPatients {
            required: 2,
            got: n_units,
        });
    }
    if b == 0 {
        return Err(Error::Domain(
            "need at least one bootstrap replicate".into(),
        ));
    }
    Ok((0..b)
        .into_par_iter()
        .map(|i| stat(&resample_counts(n_units, seed, i)))
        .collect())
}

fn interval_of(mut values: Vec<f64>, level: f64) -> Interval {
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Interval {
        lo: percentile(&values, alpha / 2.0),
        hi: percentile(&values, 1.0 - alpha / 2.0),
    }
}

/// Percentile interval of `stat` over `b` patient-level resamples. `stat`
/// receives how often each of the `n_units` patients was drawn.
pub fn bootstrap_ci<F>(n_units: usize, b: usize, level: f64, seed: u64, stat: F) -> Result<Interval>
where
    F: Fn(&[u32]) -> f64 + Sync,
{
    let reps = bootstrap_replicates(n_units, b, seed, |m| vec![stat(m)])?;
    Ok(interval_of(reps.into_iter().map(|v| v[0]).collect(), level))
}

struct RankedRow {
    unit: usize,
    /// DR score of the row's best action.
    gain: f64,
}

/// Evaluation rows grouped by day and sorted in policy rank order, with each
/// row's best action fixed by the CATE scores.
struct Targeting {
    days: Vec<Vec<RankedRow>>,
    units: usize,
    /// Per-row unit index and scores, for ATE statistics.
    unit_of_row: Vec<usize>,
}

impl Targeting {
    fn new(table: &DrScoreTable, effects: &[Vec<f64>]) -> Result<Self> {
        if effects.len() != table.rows.len() {
            return Err(Error::InconsistentInput(
                "one effect vector per DR row is required".into(),
            ));
        }
        let ids = table.patient_ids();
        let unit: HashMap<u32, usize> = ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut by_day: BTreeMap<u32, Vec<(f64, u32, RankedRow)>> = BTreeMap::new();
        let mut unit_of_row = Vec::with_capacity(table.rows.len());
        for (r, e) in table.rows.iter().zip(effects) {
            if e.len() != table.n_actions || e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "effects of patient {}",
                    r.patient_id
                )));
            }
            let (a, score) = best_action(e);
            let u = unit[&r.patient_id];
            unit_of_row.push(u);
            by_day.entry(r.day).or_default().push((
                score,
                r.patient_id,
                RankedRow {
                    unit: u,
                    gain: r.scores[a],
                },
            ));
        }
        let days = by_day
            .into_values()
            .map(|mut v| {
                v.sort_by(|x, y| rank_order((x.0, x.1), (y.0, y.1)));
                v.into_iter().map(|(_, _, row)| row).collect()
            })
            .collect();
        Ok(Self {
            days,
            units: ids.len(),
            unit_of_row,
        })
    }

    /// ATT at each fraction (ascending) under patient multiplicities.
    fn att(&self, fractions: &[f64], mult: Option<&[u32]>) -> Vec<f64> {
        let m = |u: usize| mult.map_or(1, |m| m[u]) as usize;
        let mut total = vec![0.0; fractions.len()];
        let mut counted = vec![0usize; fractions.len()];
        for day in &self.days {
            let n: usize = day.iter().map(|r| m(r.unit)).sum();
            let caps: Vec<usize> = fractions.iter().map(|&q| capacity_for(q, n)).collect();
            let mut taken = 0usize;
            let mut sum = 0.0;
            let mut next = 0;
            // Fractions are ascending, so capacities are too.
            while next < caps.len() && caps[next] == 0 {
                next += 1;
            }
            for r in day {
                if next >= caps.len() {
                    break;
                }
                let mut copies = m(r.unit);
                while copies > 0 && next < caps.len() {
                    let room = caps[next] - taken;
                    let c = copies.min(room);
                    taken += c;
                    sum += c as f64 * r.gain;
                    copies -= c;
                    while next < caps.len() && taken == caps[next] {
                        total[next] += sum / caps[next] as f64;
                        counted[next] += 1;
                        next += 1;
                    }
                }
            }
        }
        total
            .iter()
            .zip(&counted)
            .map(|(t, &c)| if c == 0 { 0.0 } else { t / c as f64 })
            .collect()
    }

    fn ate(&self, table: &DrScoreTable, mult: Option<&[u32]>) -> Vec<f64> {
        let mut sum = vec![0.0; table.n_actions];
        let mut n = 0.0;
        for (r, &u) in table.rows.iter().zip(&self.unit_of_row) {
            let w = f64::from(mult.map_or(1, |m| m[u]));
            if w == 0.0 {
                continue;
            }
            n += w;
            for (s, v) in sum.iter_mut().zip(&r.scores) {
                *s += w * v;
            }
        }
        sum.into_iter()
            .map(|s| if n > 0.0 { s / n } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TocPoint {
    pub fraction: f64,
    pub att: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TocReport {
    pub points: Vec<TocPoint>,
    /// DR ATE of each action (index 0 is control).
    pub ate: Vec<Estimate>,
    /// Non-control action with the highest DR ATE.
    pub baseline_action: usize,
    pub baseline: Estimate,
    /// ATT at `K/N = 1`: the ATE of the policy's chosen-action mix.
    pub policy_ate: Estimate,
    pub att_at_25: Estimate,
    /// `ATT@25% − baseline`.
    pub gain_at_25: Estimate,
    pub autoc: Estimate,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Statistic layout: grid ATTs, ATT@25%, ATT@1, per-action ATEs.
fn statistics(
    t: &Targeting,
    table: &DrScoreTable,
    fractions: &[f64],
    grid_pos: &[usize],
    mult: Option<&[u32]>,
) -> Vec<f64> {
    let att = t.att(fractions, mult);
    let mut out: Vec<f64> = grid_pos.iter().map(|&i| att[i]).collect();
    let at = |q: f64| {
        att[fractions
            .iter()
            .position(|&f| f == q)
            .expect("fraction present")]
    };
    out.push(at(ATT_FRACTION));
    out.push(at(1.0));
    out.extend(t.ate(table, mult));
    out
}

/// TOC curve of the policy induced by per-row effects `effects[i]` (aligned
/// with `table.rows`), with patient-bootstrap intervals.
pub fn toc_curve(
    table: &DrScoreTable,
    effects: &[Vec<f64>],
    grid: &[f64],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<TocReport> {
    if grid.is_empty() || grid.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
        return Err(Error::InvalidGrid);
    }
    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(f64::total_cmp);
    sorted_grid.dedup();
    let t = Targeting::new(table, effects)?;
    let mut fractions = sorted_grid.clone();
    fractions.extend([ATT_FRACTION, 1.0]);
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let grid_pos: Vec<usize> = sorted_grid
        .iter()
        .map(|q| {
            fractions
                .iter()
                .position(|f| f == q)
                .expect("grid in fractions")
        })
        .collect();

    let g = sorted_grid.len();
    let k = table.n_actions;
    let point = statistics(&t, table, &fractions, &grid_pos, None);
    let baseline_action = (1..k)
        .max_by(|&a, &b| {
            point[g + 2 + a]
                .total_cmp(&point[g + 2 + b])
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    let derived = |s: &[f64]| -> (f64, f64) {
        let curve: Vec<f64> = s[..g].iter().map(|v| v - s[g + 1]).collect();
        (
            s[g] - s[g + 2 + baseline_action],
            trapezoid(&sorted_grid, &curve),
        )
    };
    let reps = bootstrap_replicates(t.units, replicates, seed, |m| {
        let mut s = statistics(&t, table, &fractions, &grid_pos, Some(m));
        let (gain, autoc) = derived(&s);
        s.push(gain);
        s.push(autoc);
        s
    })?;
    let (gain, autoc) = derived(&point);
    let mut point = point;
    point.push(gain);
    point.push(autoc);
    let est = |j: usize| {
        let iv = interval_of(reps.iter().map(|r| r[j]).collect(), level);
        Estimate {
            point: point[j],
            lo: iv.lo,
            hi: iv.hi,
        }
    };
    let ate: Vec<Estimate> = (0..k).map(|a| est(g + 2 + a)).collect();
    Ok(TocReport {
        points: (0..g)
            .map(|i| TocPoint {
                fraction: sorted_grid[i],
                att: est(i),
            })
            .collect(),
        baseline_action,
        baseline: ate[baseline_action],
        ate,
        policy_ate: est(g + 1),
        att_at_25: est(g),
        gain_at_25: est(g + 2 + k),
        autoc: est(g + 3 + k),
        replicates,
        level,
        seed,
        metadata: BTreeMap::new(),
    })
}

/// ATT of the induced policy at per-day capacity `round(fraction · N_t)`,
/// without intervals.
pub fn att_at_fraction(table: &DrScoreTable, effects: &[Vec<f64>], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidGrid);
    }
    Ok(Targeting::new(table, effects)?.att(&[fraction], None)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::dr::DrRow;
    use crate::policy::{induce_from_scores, PatientScores};
    use rand_distr::{Distribution, StandardNormal};

    fn random_table(patients: u32, days: u32, seed: u64) -> (DrScoreTable, Vec<Vec<f64>>) {
        let mut r = rng::stream(seed, domain::BOOTSTRAP, 999);
        let mut rows = Vec::new();
        let mut effects = Vec::new();
        for p in 0..patients {
            for d in 0..days {
                let g: Vec<f64> = (0..3)
                    .map(|a| if a == 0 { 0.0 } else { r.random::<f64>() - 0.3 })
                    .collect();
                rows.push(DrRow {
                    patient_id: p,
                    day: 14 + 7 * d,
                    action: r.random_range(0..3),
                    reward: 0.0,
                    scores: g,
                });
                effects.push(vec![0.0, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5]);
            }
        }
        (DrScoreTable::new(3, rows).unwrap(), effects)
    }

    #[test]
    fn constant_statistic_has_degenerate_interval() {
        let iv = bootstrap_ci(10, 200, 0.95, 1, |_| 5.0).unwrap();
        assert_eq!((iv.lo, iv.hi), (5.0, 5.0));
        assert!(bootstrap_ci(1, 10, 0.95, 1, |_| 0.0).is_err());
    }

    #[test]
    fn same_seed_same_interval() {
        let vals: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let stat = |m: &[u32]| {
            let n: f64 = m.iter().map(|&c| f64::from(c)).sum();
            m.iter()
                .zip(&vals)
                .map(|(&c, v)| f64::from(c) * v)
                .sum::<f64>()
                / n
        };
        let a = bootstrap_ci(50, 300, 0.95, 9, stat).unwrap();
        let b = bootstrap_ci(50, 300, 0.95, 9, stat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn curve_matches_explicit_policy_induction() {
        let (table, effects) = random_table(30, 4, 2);
        for q in [0.1, 0.25, 0.5, 1.0] {
            let mut by_day: BTreeMap<u32, Vec<PatientScores>> = BTreeMap::new();
            for (r, e) in table.rows.iter().zip(&effects) {
                by_day.entry(r.day).or_default().push(PatientScores {
                    patient_id: r.patient_id,
                    scores: e.clone(),
                });
            }
            let k = capacity_for(q, 30);
            let assignments: Vec<Assignment> = by_day
                .into_iter()
                .map(|(d, s)| induce_from_scores(d, &s, k).unwrap())
                .collect();
            let explicit = estimate_att(&assignments, &table, k).unwrap();
            let fast = att_at_fraction(&table, &effects, q).unwrap();
            assert!(
                (explicit - fast).abs() < 1e-12,
                "q={q}: {explicit} vs {fast}"
            );
        }
    }

    #[test]
    fn full_capacity_point_is_mean_of_chosen_scores() {
        let (table, effects) = random_table(20, 3, 4);
        let report = toc_curve(&table, &effects, &default_grid(), 50, 0.95, 1).unwrap();
        let mut per_day: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for (r, e) in table.rows.iter().zip(&effects) {
            let (a, _) = best_action(e);
            let entry = per_day.entry(r.day).or_default();
            entry.0 += r.scores[a];
            entry.1 += 1;
        }
        let expected: f64 =
            per_day.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_day.len() as f64;
        assert!((report.policy_ate.point - expected).abs() < 1e-12);
        assert_eq!(
            report.points.last().unwrap().att.point,
            report.policy_ate.point
        );
        let curve: Vec<f64> = report
            .points
            .iter()
            .map(|p| p.att.point - report.policy_ate.point)
            .collect();
        let xs: Vec<f64> = report.points.iter().map(|p| p.fraction).collect();
        assert!((trapezoid(&xs, &curve) - report.autoc.point).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let (table, effects) = random_table(5, 1, 1);
        assert!(matches!(
            toc_curve(&table, &effects, &[], 10, 0.95, 1),
            Err(Error::InvalidGrid)
        ));
        assert!(matches!(
            toc_curve(&table, &effects, &[0.0, 0.5], 10, 0.95, 1),
            Err(Error::InvalidGrid)
        ));
    }

    #[test]
    fn scaling_scores_scales_att() {
        let (table, effects) = random_table(12, 2, 8);
        let a = att_at_fraction(&table, &effects, 0.25).unwrap();
        let b = att_at_fraction(&table.scaled(-2.5), &effects, 0.25).unwrap();
        assert!((b + 2.5 * a).abs() < 1e-12);
    }

    #[test]
    fn coverage_of_the_mean() {
        let mut covered = 0;
        for rep in 0..200u64 {
            let mut r = rng::stream(rep, domain::BOOTSTRAP, 12345);
            let vals: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut r)).collect();
            let iv = bootstrap_ci(400, 1000, 0.95, rep, |m| {
                m.iter()
                    .zip(&vals)
                    .map(|(&c, v)| f64::from(c) * v)
                    .sum::<f64>()
                    / 400.0
            })
            .unwrap();
            covered += usize::from(iv.contains(0.0));
        }
        let rate = covered as f64 / 200.0;
        assert!((rate - 0.95).abs() <= 0.03, "coverage {rate}");
    }

    #[test]
    fn point_plus_interval_format() {
        let e = Estimate {
            point: 0.066,
            lo: 0.056,
            hi: 0.076,
        };
        assert_eq!(e.display(100.0, 0.95), "6.6 [95% CI: 5.6-7.6]");
    }
}
