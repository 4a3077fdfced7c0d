//! Patient splits, doubly robust scoring and policy evaluation.

pub mod covariates;
pub mod dr;
pub mod report;
pub mod split;
pub mod toc;

pub use covariates::{build_control_covariates, covariate_names, ControlCovariates};
pub use dr::{dr_row, dr_scores, DrRow, DrScoreTable, EvalRow, Nuisances};
pub use split::{assert_no_overlap, split_by_patient, SplitIndex};
pub use toc::{
    att_at_fraction, bootstrap_ci, default_grid, estimate_att, toc_curve, Estimate, Interval,
    TocPoint, TocReport,
};
