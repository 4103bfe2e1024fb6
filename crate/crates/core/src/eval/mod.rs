//! Metrics, ensembling, reports and the 2-D feature-space diagnostic.

mod ensemble;
mod metrics;
mod projection;
mod report;
mod training;

pub use ensemble::{ensemble, EnsembleSpec};
pub use metrics::{accuracy, hits_at_k, mean_std, mrr, rank, roc_auc};
pub use projection::{project_2d, scatter_ratio, Projection2d};
pub use report::{compare_report, delta, ComparisonTable, EvalReport, RunMetrics, Split};
pub use training::{epochs_to_fraction, link_scores, train_edge_mrr, EpochReport, LinkScores};
