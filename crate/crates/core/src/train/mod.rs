//! Losses, metrics, optimization and evaluation.

pub mod eval;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use eval::{
    audit_patient, evaluate_bootstrap, evaluate_patients, patient_metrics, recommend, AuditRow,
    Correction, FrequencyBaseline, MetricReport, REPORT_COLUMNS,
};
pub use loss::{
    alpha_schedule, combined_loss, combined_with_alpha, grad_combined, loss_bce, loss_ddi,
    loss_multi, LossConfig, LossParts,
};
pub use metrics::{
    metric_avg_med, metric_ddi, metric_f1, metric_jaccard, metric_prauc, MetricValues,
    PatientMetrics,
};
pub use optim::AdamW;
pub use trainer::{
    dataset_loss, dataset_loss_at, patient_alphas, patient_loss, train, LogRow, TrainConfig,
    TrainOutcome,
};
