//! Error and classification metrics, movement labels and the benchmark
//! runner comparing completion methods over synthetic instruments.

mod benchmark;
mod metrics;

pub use benchmark::{
    benchmark_run, comparison_methods, complete_with, completion_rmse, decoder_variants,
    downstream_metrics, loss_variants, mcdbn_complete, run_variants, train_mcdbn, ComparisonTable,
    Completed, Instrument, InstrumentRun, Method, MethodSummary, Variant,
};
pub use metrics::{f1_accuracy, mape, movement_labels, rmse, Mape, Metrics, MAPE_EPS};
