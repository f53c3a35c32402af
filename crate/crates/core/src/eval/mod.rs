//! Synthetic evaluation harness: reference effects with known closed forms,
//! seeded corpora, unpaired splits, a paired supervised baseline, held-out
//! metric reports, and budget sweeps across all estimation methods.

pub mod corpus;
pub mod effects;
pub mod report;
pub mod splits;
pub mod supervised;
pub mod sweep;

pub use corpus::{synth_corpus, CorpusKind, AR1_COEFF, CORPUS_PEAK};
pub use effects::{EffectKind, GroundTruthEffect};
pub use report::{evaluate, MetricReport, MetricRow, MetricsCfg, ReportMeta};
pub use splits::{make_splits, SourceAudit, SplitPlan, Splits};
pub use supervised::{supervised_train, SupervisedConfig, SupervisedRun};
pub use sweep::{budget_sweep, clean_ar1_stats, run_cell, Method, SweepConfig, SweepFailure, SweepRow, SweepTable};
