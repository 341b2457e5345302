//! Bound formulas, estimators and bound reports.

pub mod bounds;
pub mod fit;
pub mod quartic;
pub mod report;
pub mod tails;
pub mod wasserstein;

pub use bounds::*;
pub use fit::{linear_fit, loglinear_fit, loglog_fit, LinearFit};
pub use quartic::{quartic_form_constant, quartic_ratio, QuarticFormReport};
pub use report::{build_bound_report, statistic_curve, BoundReport, Statistic, VIOLATION_SIGMAS};
pub use tails::{build_tail_report, default_hill_k, hill_tail_index, TailReport, TailVerdict};
pub use wasserstein::{w2_1d, w2_sliced, w2_sliced_with, SlicedW2};
