//! End-to-end evaluation: the positioning pipeline, percentile metrics and
//! CSV reports.

mod metrics;
mod pipeline;
mod report;

pub use metrics::{mean, median, percentile, std_dev};
pub use pipeline::{
    aggregate_seeds, binned_prediction_error, localize, run_pipeline, run_pipeline_with,
    EpochResult, ErrorSource, ErrorStats, Estimators, EvalReport, Fix, FixStatus, PipelineSpec,
    SeedAggregate, SeedSpread,
};
pub use report::{
    cdf_csv, emit_reports, epochs_csv, summary_csv, trace_csv, trace_rows, CDF_FILE, EPOCHS_FILE,
    REPORT_FILE, SUMMARY_FILE, TRACE_FILE,
};
