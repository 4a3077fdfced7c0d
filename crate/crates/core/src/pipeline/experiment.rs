//! In-memory pipeline stages: simulate, featurize, split, fit and evaluate.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::covariates::build_control_covariates;
use crate::evaluation::dr::{DrScoreTable, EvalRow, Nuisances};
use crate::evaluation::split::{assert_no_overlap, split_by_patient, SplitIndex};
use crate::evaluation::toc::{att_at_fraction, toc_curve, TocReport, ATT_FRACTION};
use crate::features::Feature;
use crate::learners::forest::ForestConfig;
use crate::learners::{fit_cate_with, fit_ensemble, CateData, CateMethod, CateModel};
use crate::policy::{regret_from_tables, DayTables, PatientScores};
use crate::representations::actions::clinical_class;
use crate::representations::{ActionEncoder, ActionScheme, StateEncoder, StateMode};
use crate::rng::derive_seed;
use crate::sim::{ActionClass, LoggedPanel, Simulator};

/// Row counts of the featurize stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub low_wear: usize,
    pub stride_skipped: usize,
    pub kept: usize,
}

/// Simulated panel, eligible rows and the patient split. The test patients
/// can be read exactly once.
#[derive(Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub panel: LoggedPanel,
    /// Panel positions of the rows kept for training and evaluation.
    pub eligible: Vec<usize>,
    pub filter: FilterSummary,
    pub split: SplitIndex,
    test_reads: AtomicUsize,
}

impl Experiment {
    /// Simulates the configured panel, then featurizes and splits it.
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        let panel = simulate(config)?;
        Self::from_panel(config, panel)
    }

    pub fn from_panel(config: &RunConfig, panel: LoggedPanel) -> Result<Self> {
        let (eligible, filter) = eligible_rows(
            &panel,
            config.evaluation.min_wear_fraction,
            config.evaluation.day_stride,
        );
        let split = split_by_patient(&panel.patient_ids(), config.evaluation.split_seed)?;
        split.check_disjoint()?;
        Ok(Self {
            config: config.clone(),
            panel,
            eligible,
            filter,
            split,
            test_reads: AtomicUsize::new(0),
        })
    }

    /// Eligible positions of the given patients, in panel order.
    fn positions(&self, patients: &[u32]) -> Vec<usize> {
        let set: HashSet<u32> = patients.iter().copied().collect();
        self.eligible
            .iter()
            .copied()
            .filter(|&p| set.contains(&self.panel.rows()[p].patient_id))
            .collect()
    }

    pub fn train_positions(&self) -> Vec<usize> {
        self.positions(&self.split.train)
    }

    pub fn validation_positions(&self) -> Vec<usize> {
        self.positions(&self.split.validation)
    }

    /// Test positions; a second request is an error.
    pub fn test_positions(&self) -> Result<Vec<usize>> {
        if self.test_reads.fetch_add(1, Ordering::SeqCst) > 0 {
            return Err(Error::InconsistentInput(
                "the test split has already been read".into(),
            ));
        }
        Ok(self.positions(&self.split.test))
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::SeqCst)
    }

    /// Rows at the given positions.
    pub fn rows(&self, positions: &[usize]) -> Vec<&crate::sim::LoggedRow> {
        positions.iter().map(|&p| &self.panel.rows()[p]).collect()
    }

    fn patients_of(&self, positions: &[usize]) -> Vec<u32> {
        let mut ids: Vec<u32> = positions
            .iter()
            .map(|&p| self.panel.rows()[p].patient_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

pub fn simulate(config: &RunConfig) -> Result<LoggedPanel> {
    let s = &config.simulation;
    let sim = Simulator::default();
    let cohort = sim.sample_cohort(s.patients, s.cohort_seed);
    sim.simulate_panel(&cohort, s.days, s.confounding_strength, s.panel_seed)
}

/// Drops rows whose 7-day wear fraction is below `min_wear` and keeps every
/// `stride`-th review day of each patient.
pub fn eligible_rows(
    panel: &LoggedPanel,
    min_wear: f64,
    stride: usize,
) -> (Vec<usize>, FilterSummary) {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    let mut low_wear = 0;
    let mut stride_skipped = 0;
    for (i, r) in panel.rows().iter().enumerate() {
        let n = seen.entry(r.patient_id).or_default();
        let index = *n;
        *n += 1;
        if !index.is_multiple_of(stride) {
            stride_skipped += 1;
        } else if r.features.get(Feature::TimeWorn7dr) < min_wear {
            low_wear += 1;
        } else {
            kept.push(i);
        }
    }
    let summary = FilterSummary {
        total: panel.rows().len(),
        low_wear,
        stride_skipped,
        kept: kept.len(),
    };
    (kept, summary)
}

/// Fitted state and action maps of one sweep cell, plus the clinical-class
/// composition of each action id among training messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub state: StateEncoder,
    pub action: ActionEncoder,
    /// `composition[a][c]`: share of training messages with id `a` whose
    /// clinical class is `c`.
    pub composition: Vec<[f64; ActionClass::COUNT]>,
}

impl Representation {
    /// True effect of every action id, mixing the clinical-class effects by
    /// the training composition.
    pub fn true_effects(&self, class_effects: &[f64; ActionClass::COUNT]) -> Vec<f64> {
        self.composition
            .iter()
            .enumerate()
            .map(|(a, mix)| {
                if a == 0 {
                    0.0
                } else {
                    mix.iter().zip(class_effects).map(|(w, t)| w * t).sum()
                }
            })
            .collect()
    }
}

pub fn fit_representation(
    exp: &Experiment,
    mode: StateMode,
    scheme: ActionScheme,
) -> Result<Representation> {
    let train = exp.train_positions();
    let rows: Vec<crate::sim::LoggedRow> = exp.rows(&train).into_iter().cloned().collect();
    let seed = exp.config.representations.seed;
    let state = StateEncoder::fit(
        mode,
        &rows,
        exp.config.representations.top_k,
        derive_seed(seed, 1, 0),
    )?;
    let action = ActionEncoder::fit(
        scheme,
        rows.iter().map(|r| &r.action),
        derive_seed(seed, 2, 0),
    )?;
    let n = action.n_actions();
    let mut counts = vec![[0.0; ActionClass::COUNT]; n];
    for r in &rows {
        let a = action.encode(&r.action);
        let c = if r.action.is_message() {
            clinical_class(&r.action.labels).id()
        } else {
            0
        };
        counts[a][c] += 1.0;
    }
    let composition = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.map(|v| v / total)
            } else {
                row
            }
        })
        .collect();
    Ok(Representation {
        state,
        action,
        composition,
    })
}

pub fn state_matrix(
    exp: &Experiment,
    encoder: &StateEncoder,
    positions: &[usize],
) -> Result<Array2<f64>> {
    encoder.encode_matrix(&exp.panel, &exp.rows(positions))
}

pub fn action_ids(exp: &Experiment, encoder: &ActionEncoder, positions: &[usize]) -> Vec<usize> {
    positions
        .iter()
        .map(|&p| encoder.encode(&exp.panel.rows()[p].action))
        .collect()
}

/// DR scores of evaluation rows under one action scheme and history length.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub scheme: ActionScheme,
    pub history_weeks: usize,
    /// Panel positions aligned with `table.rows`.
    pub positions: Vec<usize>,
    pub table: DrScoreTable,
    pub dropped: usize,
}

/// Fits the nuisances on the training rows' control covariates and scores the
/// evaluation rows.
pub fn evaluation_context(
    exp: &Experiment,
    action: &ActionEncoder,
    eval_positions: &[usize],
    history_weeks: usize,
) -> Result<EvalContext> {
    let train = exp.train_positions();
    assert_no_overlap(&exp.patients_of(&train), &exp.patients_of(eval_positions))?;
    let tc = build_control_covariates(&exp.panel, &train, history_weeks)?;
    let ta = action_ids(exp, action, &tc.rows);
    let tr: Vec<f64> = tc
        .rows
        .iter()
        .map(|&p| exp.panel.rows()[p].reward)
        .collect();
    let floor = exp.config.evaluation.clip_floor;
    let nuisances = Nuisances::fit(tc.x.view(), &ta, &tr, action.n_actions(), floor)?;
    let ec = build_control_covariates(&exp.panel, eval_positions, history_weeks)?;
    let eval_rows: Vec<EvalRow> = ec
        .rows
        .iter()
        .map(|&p| {
            let r = &exp.panel.rows()[p];
            EvalRow {
                patient_id: r.patient_id,
                day: r.day,
                action: action.encode(&r.action),
                reward: r.reward,
            }
        })
        .collect();
    let table = nuisances.score(&eval_rows, ec.x.view())?;
    Ok(EvalContext {
        scheme: action.scheme(),
        history_weeks,
        positions: ec.rows,
        table,
        dropped: ec.dropped,
    })
}

/// One cell of the representation × learner sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellSpec {
    pub state_mode: StateMode,
    pub action_scheme: ActionScheme,
    pub method: CateMethod,
}

impl CellSpec {
    pub fn name(&self) -> String {
        format!(
            "{}__{}__{}",
            self.state_mode, self.action_scheme, self.method
        )
    }
}

/// Fits a base (non-ensemble) CATE model on the training rows.
pub fn fit_cell_model(
    exp: &Experiment,
    rep: &Representation,
    method: CateMethod,
) -> Result<CateModel> {
    let train = exp.train_positions();
    let x = state_matrix(exp, &rep.state, &train)?;
    let actions = action_ids(exp, &rep.action, &train);
    let rewards = train.iter().map(|&p| exp.panel.rows()[p].reward).collect();
    let data = CateData::new(
        x,
        actions,
        rewards,
        rep.action.n_actions(),
        rep.state.feature_names(),
    )?;
    let forest = ForestConfig {
        n_trees: exp.config.learners.forest_trees,
        ..ForestConfig::default()
    };
    let seed = derive_seed(exp.config.learners.seed, method as u64, 0);
    fit_cate_with(method, &data, forest, seed)
}

/// Ensemble of fitted candidates with weights learned on the validation DR
/// scores of `ctx`.
pub fn fit_cell_ensemble(
    exp: &Experiment,
    rep: &Representation,
    candidates: Vec<CateModel>,
    ctx: &EvalContext,
) -> Result<CateModel> {
    let x = state_matrix(exp, &rep.state, &ctx.positions)?;
    let dr: Vec<Vec<f64>> = ctx.table.rows.iter().map(|r| r.scores.clone()).collect();
    fit_ensemble(candidates, x.view(), &dr)
}

/// Per-row predicted effects of `model` on the rows of `ctx`.
pub fn cell_effects(
    exp: &Experiment,
    rep: &Representation,
    model: &CateModel,
    ctx: &EvalContext,
) -> Result<Vec<Vec<f64>>> {
    let x = state_matrix(exp, &rep.state, &ctx.positions)?;
    model.predict_rows(x.view())
}

/// Per-row true effects of each action id on the rows of `ctx`.
pub fn true_effects(
    exp: &Experiment,
    rep: &Representation,
    ctx: &EvalContext,
) -> Result<Vec<Vec<f64>>> {
    let oracle = exp.panel.oracle()?;
    Ok(ctx
        .positions
        .iter()
        .map(|&p| rep.true_effects(&oracle[p].effects))
        .collect())
}

/// TOC report of a policy given per-row effects on the rows of `ctx`.
pub fn evaluate_effects(
    exp: &Experiment,
    ctx: &EvalContext,
    effects: &[Vec<f64>],
) -> Result<TocReport> {
    let e = &exp.config.evaluation;
    toc_curve(
        &ctx.table,
        effects,
        &e.grid,
        e.bootstrap_replicates,
        e.level,
        e.bootstrap_seed,
    )
}

/// Oracle quantities of a policy at the ATT@25% capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleScore {
    /// True ATT of the induced policy.
    pub att_at_25: f64,
    /// True ATT of the oracle-optimal policy minus that of the induced one.
    pub regret_at_25: f64,
}

pub fn oracle_score(
    ctx: &EvalContext,
    effects: &[Vec<f64>],
    truth: &[Vec<f64>],
) -> Result<OracleScore> {
    let truth_rows = ctx
        .table
        .rows
        .iter()
        .zip(truth)
        .map(|(r, t)| crate::evaluation::dr::DrRow {
            scores: t.clone(),
            ..r.clone()
        })
        .collect();
    let truth_table = DrScoreTable::new(ctx.table.n_actions, truth_rows)?;
    let att = att_at_fraction(&truth_table, effects, ATT_FRACTION)?;
    let mut days: BTreeMap<u32, DayTables> = BTreeMap::new();
    for ((r, e), t) in ctx.table.rows.iter().zip(effects).zip(truth) {
        let d = days.entry(r.day).or_insert_with(|| DayTables {
            day: r.day,
            truth: Vec::new(),
            estimate: Vec::new(),
        });
        d.truth.push(PatientScores {
            patient_id: r.patient_id,
            scores: t.clone(),
        });
        d.estimate.push(PatientScores {
            patient_id: r.patient_id,
            scores: e.clone(),
        });
    }
    let days: Vec<DayTables> = days.into_values().collect();
    Ok(OracleScore {
        att_at_25: att,
        regret_at_25: regret_from_tables(&days, ATT_FRACTION)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub toc: TocReport,
    pub oracle: Option<OracleScore>,
    pub rows: usize,
}

pub fn evaluate_cell(
    exp: &Experiment,
    rep: &Representation,
    model: &CateModel,
    cell: CellSpec,
    ctx: &EvalContext,
) -> Result<CellResult> {
    let effects = cell_effects(exp, rep, model, ctx)?;
    let mut toc = evaluate_effects(exp, ctx, &effects)?;
    toc.metadata
        .insert("cell".into(), serde_json::json!(cell.name()));
    toc.metadata
        .insert("history_weeks".into(), serde_json::json!(ctx.history_weeks));
    let oracle = match exp.panel.oracle() {
        Ok(_) => Some(oracle_score(ctx, &effects, &true_effects(exp, rep, ctx)?)?),
        Err(Error::MissingOracle) => None,
        Err(e) => return Err(e),
    };
    Ok(CellResult {
        cell,
        toc,
        oracle,
        rows: ctx.positions.len(),
    })
}
