//! Trace ingestion, the utilization-to-request profiler and the GRU
//! utilization forecaster.

mod predictor;
mod profiler;
mod trace;

pub use predictor::{
    evaluate_mse, evaluate_mse_with, forecast_series, min_series_len, split_point, train_predictor,
    train_predictor_with, Forecaster, MinMax, PredictorConfig, PredictorModel, PredictorParams,
};
pub use profiler::{
    fit_profiler, fit_profiler_with, profile_cluster, util_to_requests, ProfileSample, ProfilerModel,
    PROFILER_MIN_SAMPLES,
};
pub use trace::{
    parse_trace, parse_trace_str, synthetic_trace, SyntheticTraceConfig, TraceRecord, UtilPoint, WorkloadTrace,
    TRACE_HEADER,
};
