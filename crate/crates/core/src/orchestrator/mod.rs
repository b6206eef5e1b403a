//! The two-stage control loop, the retraining notifier, the threshold
//! baseline, metrics and reports.

mod baseline;
mod metrics;
mod notifier;
mod report;
mod run;
mod scenario;

pub use baseline::{threshold_autoscaler, BASELINE_CPU_THRESHOLD};
pub use metrics::{compute_metrics, MetricsSummary, PercentileValue, REPORT_PERCENTILES};
pub use notifier::{retraining_notifier, NotifierConfig, RetrainingNotifier};
pub use report::{
    percentile_header, write_report, Report, ReportPaths, METRICS_FILE, PERCENTILE_FILE, SUMMARY_FILE,
};
pub use run::{
    build_report, collect_guidance, evaluate, run_system, start_tick_for_seed, train_students, train_teacher,
    Controllers, EvalRun, Mode, RunOptions, RunOutcome, Stage, StudentFit, TeacherTraining,
};
pub use scenario::{build_workload, LoadConfig, Scenario, StudentConfig, Workload, DESK_SCENARIO};
