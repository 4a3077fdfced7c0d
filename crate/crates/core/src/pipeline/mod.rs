//! Configuration-driven sweep: simulate, featurize, split, fit, evaluate and
//! report, writing every artifact under the output directory.

pub mod config;
pub mod experiment;
pub mod slices;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use experiment::{
    evaluate_cell, evaluation_context, fit_cell_ensemble, fit_cell_model, fit_representation,
    CellResult, CellSpec, EvalContext, Experiment, FilterSummary, OracleScore, Representation,
};

use crate::error::{Error, Result};
use crate::evaluation::covariates::build_control_covariates;
use crate::evaluation::report::{interval_svg, line_svg, toc_csv, toc_svg, IntervalRow, Series};
use crate::evaluation::toc::{Estimate, TocReport};
use crate::learners::{CateMethod, CateModel};
use crate::representations::{ActionScheme, StateMode};
use crate::sim::export::{write_oracle_csv, write_panel_csv};
use slices::{optimal_message_cate, report_cate_slices, slices_csv, Slice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Featurize,
    Split,
    Fit,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Featurize,
        Stage::Split,
        Stage::Fit,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Featurize => "featurize",
            Stage::Split => "split",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

fn in_stage<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.name(),
            source: Box::new(other),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }
}

/// Per-cell line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub state_mode: StateMode,
    pub action_scheme: ActionScheme,
    pub method: CateMethod,
    pub rows: usize,
    pub att_at_25: Estimate,
    pub baseline_action: usize,
    pub baseline: Estimate,
    pub autoc: Estimate,
    pub policy_ate: Estimate,
    pub oracle: Option<OracleScore>,
}

impl CellSummary {
    fn of(r: &CellResult) -> Self {
        Self {
            cell: r.cell.name(),
            state_mode: r.cell.state_mode,
            action_scheme: r.cell.action_scheme,
            method: r.cell.method,
            rows: r.rows,
            att_at_25: r.toc.att_at_25,
            baseline_action: r.toc.baseline_action,
            baseline: r.toc.baseline,
            autoc: r.toc.autoc,
            policy_ate: r.toc.policy_ate,
            oracle: r.oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub history_weeks: usize,
    pub rows: usize,
    pub att_at_25: Estimate,
    pub baseline: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub cell: String,
    pub att_at_25: Estimate,
    pub baseline: Estimate,
    pub autoc: Estimate,
    /// `ATT@25%` in percentage points with its interval.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub stages: Vec<String>,
    pub filter: Option<FilterSummary>,
    pub split_sizes: Option<[usize; 3]>,
    pub cells: Vec<CellSummary>,
    pub best_cell: Option<String>,
    pub test: Option<TestSummary>,
    pub test_split_reads: usize,
    pub history: Vec<HistoryPoint>,
    pub slices: Vec<Slice>,
    pub files: Vec<ManifestEntry>,
}

/// Runs every stage.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    run_until(config, Stage::Report)
}

/// Runs the stages up to and including `until` on the configured worker pool.
pub fn run_until(config: &RunConfig, until: Stage) -> Result<RunReport> {
    config.validate()?;
    let workers = config.worker_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(config, until))
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    key: String,
    model: CateModel,
}

fn model_key(config: &RunConfig, cell: &CellSpec, extra: &str) -> String {
    let c = config;
    let e = &c.evaluation;
    let text = format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        toml::to_string(&c.simulation).unwrap_or_default(),
        toml::to_string(&c.representations).unwrap_or_default(),
        c.learners.seed,
        c.learners.forest_trees,
        e.split_seed,
        e.day_stride,
        e.min_wear_fraction,
        e.history_weeks,
        e.clip_floor,
        cell.name(),
        extra
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn load_cached(dir: &Path, rel: &str, key: &str) -> Option<CateModel> {
    let text = fs::read_to_string(dir.join(rel)).ok()?;
    let stored: StoredModel = serde_json::from_str(&text).ok()?;
    (stored.key == key).then_some(stored.model)
}

fn summary_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(
        "cell,state_mode,action_scheme,method,rows,att_at_25,att_lo,att_hi,baseline_action,baseline,baseline_lo,baseline_hi,autoc,autoc_lo,autoc_hi,policy_ate,oracle_att_at_25,regret_at_25\n",
    );
    for c in cells {
        let (oa, rg) = c.oracle.map_or((String::new(), String::new()), |o| {
            (o.att_at_25.to_string(), o.regret_at_25.to_string())
        });
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.cell,
            c.state_mode,
            c.action_scheme,
            c.method,
            c.rows,
            c.att_at_25.point,
            c.att_at_25.lo,
            c.att_at_25.hi,
            c.baseline_action,
            c.baseline.point,
            c.baseline.lo,
            c.baseline.hi,
            c.autoc.point,
            c.autoc.lo,
            c.autoc.hi,
            c.policy_ate.point,
            oa,
            rg
        );
    }
    s
}

fn write_toc(out: &mut Outputs, prefix: &str, toc: &TocReport, title: &str) -> Result<()> {
    out.json(&format!("{prefix}/toc.json"), toc)?;
    out.write(&format!("{prefix}/toc.csv"), toc_csv(toc).as_bytes())?;
    out.write(&format!("{prefix}/toc.svg"), toc_svg(toc, title).as_bytes())
}

fn run_stages(config: &RunConfig, until: Stage) -> Result<RunReport> {
    let mut report = RunReport {
        config_hash: config.hash(),
        stages: Vec::new(),
        filter: None,
        split_sizes: None,
        cells: Vec::new(),
        best_cell: None,
        test: None,
        test_split_reads: 0,
        history: Vec::new(),
        slices: Vec::new(),
        files: Vec::new(),
    };
    let mut out = in_stage(Stage::Simulate, || Outputs::new(&config.output_dir))?;
    out.write("config.toml", config.snapshot_toml().as_bytes())?;

    let panel = in_stage(Stage::Simulate, || {
        let panel = experiment::simulate(config)?;
        let mut buf = Vec::new();
        write_panel_csv(&panel, &mut buf)?;
        out.write("data/panel.csv", &buf)?;
        let mut buf = Vec::new();
        write_oracle_csv(&panel, &mut buf)?;
        out.write("data/oracle.csv", &buf)?;
        let latents: Vec<_> = panel.patients().iter().map(|p| &p.latent).collect();
        out.json("data/cohort.json", &latents)?;
        Ok(panel)
    })?;
    report.stages.push(Stage::Simulate.name().into());
    if until == Stage::Simulate {
        return finish(out, report);
    }

    let exp = in_stage(Stage::Featurize, || {
        let exp = Experiment::from_panel(config, panel)?;
        let mut csv = String::from("patient_id,day\n");
        for r in exp.rows(&exp.eligible) {
            let _ = writeln!(csv, "{},{}", r.patient_id, r.day);
        }
        out.write("data/eligible_rows.csv", csv.as_bytes())?;
        let cov =
            build_control_covariates(&exp.panel, &exp.eligible, config.evaluation.history_weeks)?;
        out.json(
            "data/featurize.json",
            &serde_json::json!({ "filter": exp.filter, "control_covariates": cov.summary(), "columns": cov.names }),
        )?;
        Ok(exp)
    })?;
    report.filter = Some(exp.filter);
    report.stages.push(Stage::Featurize.name().into());
    if until == Stage::Featurize {
        return finish(out, report);
    }

    in_stage(Stage::Split, || out.json("data/split.json", &exp.split))?;
    report.split_sizes = Some([
        exp.split.train.len(),
        exp.split.validation.len(),
        exp.split.test.len(),
    ]);
    report.stages.push(Stage::Split.name().into());
    if until == Stage::Split {
        return finish(out, report);
    }

    let r = &config.representations;
    let pairs: Vec<(StateMode, ActionScheme)> = r
        .state_modes
        .iter()
        .flat_map(|&s| r.action_schemes.iter().map(move |&a| (s, a)))
        .collect();
    let base_methods: Vec<CateMethod> = config
        .learners
        .methods
        .iter()
        .copied()
        .filter(|m| *m != CateMethod::Ensemble)
        .collect();
    let with_ensemble = config.learners.methods.contains(&CateMethod::Ensemble);
    let h = config.evaluation.history_weeks;

    let (reps, contexts, models) = in_stage(Stage::Fit, || {
        let reps: BTreeMap<(StateMode, ActionScheme), Representation> = pairs
            .par_iter()
            .map(|&(s, a)| fit_representation(&exp, s, a).map(|rep| ((s, a), rep)))
            .collect::<Result<_>>()?;
        for ((s, a), rep) in &reps {
            out.json(&format!("representations/{s}__{a}.json"), rep)?;
        }
        let validation = exp.validation_positions();
        let contexts: BTreeMap<ActionScheme, EvalContext> = r
            .action_schemes
            .par_iter()
            .map(|&a| {
                let rep = reps
                    .iter()
                    .find(|((_, sa), _)| *sa == a)
                    .expect("scheme fitted")
                    .1;
                evaluation_context(&exp, &rep.action, &validation, h).map(|c| (a, c))
            })
            .collect::<Result<_>>()?;
        for (a, ctx) in &contexts {
            out.json(&format!("dr/validation__{a}.json"), &ctx.table)?;
        }
        let specs: Vec<CellSpec> = pairs
            .iter()
            .flat_map(|&(s, a)| {
                base_methods.iter().map(move |&m| CellSpec {
                    state_mode: s,
                    action_scheme: a,
                    method: m,
                })
            })
            .collect();
        let fitted: Vec<(CellSpec, String, CateModel)> = specs
            .par_iter()
            .map(|cell| {
                let rel = format!("models/{}.json", cell.name());
                let key = model_key(config, cell, "");
                let model = match load_cached(&config.output_dir, &rel, &key) {
                    Some(m) => m,
                    None => fit_cell_model(
                        &exp,
                        &reps[&(cell.state_mode, cell.action_scheme)],
                        cell.method,
                    )?,
                };
                Ok((*cell, key, model))
            })
            .collect::<Result<_>>()?;
        let mut models: BTreeMap<CellSpec, CateModel> = BTreeMap::new();
        let mut keys: BTreeMap<CellSpec, String> = BTreeMap::new();
        for (cell, key, model) in fitted {
            out.json(
                &format!("models/{}.json", cell.name()),
                &StoredModel {
                    key: key.clone(),
                    model: model.clone(),
                },
            )?;
            keys.insert(cell, key);
            models.insert(cell, model);
        }
        if with_ensemble {
            for &(s, a) in &pairs {
                let cell = CellSpec {
                    state_mode: s,
                    action_scheme: a,
                    method: CateMethod::Ensemble,
                };
                let members: Vec<CellSpec> = base_methods
                    .iter()
                    .map(|&m| CellSpec { method: m, ..cell })
                    .collect();
                let extra: String = members.iter().map(|m| keys[m].as_str()).collect();
                let key = model_key(config, &cell, &extra);
                let rel = format!("models/{}.json", cell.name());
                let model = match load_cached(&config.output_dir, &rel, &key) {
                    Some(m) => m,
                    None => fit_cell_ensemble(
                        &exp,
                        &reps[&(s, a)],
                        members.iter().map(|m| models[m].clone()).collect(),
                        &contexts[&a],
                    )?,
                };
                out.json(
                    &rel,
                    &StoredModel {
                        key,
                        model: model.clone(),
                    },
                )?;
                models.insert(cell, model);
            }
        }
        Ok((reps, contexts, models))
    })?;
    report.stages.push(Stage::Fit.name().into());
    if until == Stage::Fit {
        return finish(out, report);
    }

    let order: Vec<CellSpec> = pairs
        .iter()
        .flat_map(|&(s, a)| {
            config.learners.methods.iter().map(move |&m| CellSpec {
                state_mode: s,
                action_scheme: a,
                method: m,
            })
        })
        .collect();
    let (results, best) = in_stage(Stage::Evaluate, || {
        let results: Vec<CellResult> = order
            .par_iter()
            .map(|cell| {
                evaluate_cell(
                    &exp,
                    &reps[&(cell.state_mode, cell.action_scheme)],
                    &models[cell],
                    *cell,
                    &contexts[&cell.action_scheme],
                )
            })
            .collect::<Result<_>>()?;
        for res in &results {
            let name = res.cell.name();
            write_toc(
                &mut out,
                &format!("cells/{name}"),
                &res.toc,
                &format!("TOC (validation): {name}"),
            )?;
        }
        let summaries: Vec<CellSummary> = results.iter().map(CellSummary::of).collect();
        out.write("summary.csv", summary_csv(&summaries).as_bytes())?;
        let best = results
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| {
                a.toc
                    .att_at_25
                    .point
                    .total_cmp(&b.toc.att_at_25.point)
                    .then(j.cmp(i))
            })
            .map(|(_, r)| r.cell)
            .expect("at least one cell");
        out.json(
            "selection.json",
            &serde_json::json!({ "best_cell": best.name(), "criterion": "validation ATT@25%" }),
        )?;
        let rep = &reps[&(best.state_mode, best.action_scheme)];
        let test = exp.test_positions()?;
        let ctx = evaluation_context(&exp, &rep.action, &test, h)?;
        let res = evaluate_cell(&exp, rep, &models[&best], best, &ctx)?;
        write_toc(
            &mut out,
            "test",
            &res.toc,
            &format!("TOC (test): {}", best.name()),
        )?;
        let t = &res.toc;
        let test_summary = TestSummary {
            cell: best.name(),
            att_at_25: t.att_at_25,
            baseline: t.baseline,
            autoc: t.autoc,
            display: t.att_at_25.display(100.0, t.level),
        };
        out.json("test/summary.json", &test_summary)?;
        report.cells = summaries;
        report.test = Some(test_summary);
        report.best_cell = Some(best.name());
        Ok((results, best))
    })?;
    report.test_split_reads = exp.test_reads();
    report.stages.push(Stage::Evaluate.name().into());
    if until == Stage::Evaluate {
        return finish(out, report);
    }

    in_stage(Stage::Report, || {
        let rows: Vec<IntervalRow> = report
            .cells
            .iter()
            .map(|c| IntervalRow {
                label: c.cell.clone(),
                estimate: c.att_at_25,
                reference: Some(c.baseline.point),
            })
            .collect();
        out.write(
            "figures/att25_by_cell.svg",
            interval_svg(
                &rows,
                "ATT@25% on validation (dashed: highest-ATE action)",
                "ATT@25%",
            )
            .as_bytes(),
        )?;
        let rows: Vec<IntervalRow> = report
            .cells
            .iter()
            .map(|c| IntervalRow {
                label: c.cell.clone(),
                estimate: c.autoc,
                reference: None,
            })
            .collect();
        out.write(
            "figures/autoc_by_cell.svg",
            interval_svg(&rows, "AUTOC on validation", "AUTOC").as_bytes(),
        )?;
        let best_result = results
            .iter()
            .find(|r| r.cell == best)
            .expect("best cell evaluated");
        out.write(
            "figures/toc_best_validation.svg",
            toc_svg(
                &best_result.toc,
                &format!("TOC (validation): {}", best.name()),
            )
            .as_bytes(),
        )?;

        let rep = &reps[&(best.state_mode, best.action_scheme)];
        let ctx = &contexts[&best.action_scheme];
        let effects = experiment::cell_effects(&exp, rep, &models[&best], ctx)?;
        let cate = optimal_message_cate(&effects);
        let slices = report_cate_slices(
            &exp.rows(&ctx.positions),
            &cate,
            &config.report.slice_features,
        )?;
        out.write("slices/slices.csv", slices_csv(&slices).as_bytes())?;
        for s in &slices {
            let series = Series {
                name: best.name(),
                points: s.points.iter().map(|p| (p.x, p.mean_cate)).collect(),
            };
            out.write(
                &format!("slices/{}.svg", s.feature),
                line_svg(
                    &[series],
                    &format!("CATE of the optimal message vs {}", s.feature),
                    &s.feature,
                    "CATE",
                )
                .as_bytes(),
            )?;
        }
        report.slices = slices;

        if !config.evaluation.history_sweep.is_empty() {
            let mut weeks = config.evaluation.history_sweep.clone();
            weeks.push(h);
            weeks.sort_unstable();
            weeks.dedup();
            let longest = *weeks.last().expect("non-empty");
            let validation = exp.validation_positions();
            let common = build_control_covariates(&exp.panel, &validation, longest)?.rows;
            let mut csv = String::from("history_weeks,rows,att_at_25,lo,hi,baseline\n");
            for &w in &weeks {
                let ctx = evaluation_context(&exp, &rep.action, &common, w)?;
                let res = evaluate_cell(&exp, rep, &models[&best], best, &ctx)?;
                let _ = writeln!(
                    csv,
                    "{w},{},{},{},{},{}",
                    res.rows,
                    res.toc.att_at_25.point,
                    res.toc.att_at_25.lo,
                    res.toc.att_at_25.hi,
                    res.toc.baseline.point
                );
                report.history.push(HistoryPoint {
                    history_weeks: w,
                    rows: res.rows,
                    att_at_25: res.toc.att_at_25,
                    baseline: res.toc.baseline,
                });
            }
            out.write("history.csv", csv.as_bytes())?;
            let rows: Vec<IntervalRow> = report
                .history
                .iter()
                .map(|p| IntervalRow {
                    label: format!("{} weeks", p.history_weeks),
                    estimate: p.att_at_25,
                    reference: Some(p.baseline.point),
                })
                .collect();
            out.write(
                "figures/att25_by_history.svg",
                interval_svg(&rows, "ATT@25% by control-covariate history", "ATT@25%").as_bytes(),
            )?;
        }
        Ok(())
    })?;
    report.stages.push(Stage::Report.name().into());
    finish(out, report)
}

fn finish(mut out: Outputs, mut report: RunReport) -> Result<RunReport> {
    out.files.sort_by(|a, b| a.path.cmp(&b.path));
    report.files = out.files.clone();
    out.json("run_report.json", &report)?;
    Ok(report)
}
