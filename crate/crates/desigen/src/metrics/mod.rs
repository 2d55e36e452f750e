//! Quantitative evaluation: layout/background metrics, the FD-lite
//! distribution distance, attention–saliency correlation and report emission.

pub mod attn_sim;
pub mod fd;
pub mod layout_metrics;
pub mod reference;
pub mod report;
pub mod stats;

pub use attn_sim::{attention_saliency_similarity, AttnSimOutcome};
pub use fd::{fd_lite, train_feature_extractor, FeatureExtractor, FxConfig};
pub use layout_metrics::{alignment, occlusion, overlap, salient_ratio};
pub use report::{emit_report, MetricReport, MetricSeries, ReportMeta};
