//! Rationale metrics, report tables, the exact loss-landscape analyzer and
//! highlighted renderings.

mod landscape;
mod metrics;
mod render;
mod report;

pub use landscape::{landscape_report, role_loss, LandscapeCriterion, LandscapeReport, LandscapeRow, Regime, LOSS_TIE_TOLERANCE};
pub use metrics::{mean_std, measured_sparsity, token_prf, token_prf_with, Averaging, Prf};
pub use render::{render_rationales, RenderFormat, RenderItem};
pub use report::{comparison_table, evaluate_split, EvalReport, SeedResult, SplitEval, Summary};
