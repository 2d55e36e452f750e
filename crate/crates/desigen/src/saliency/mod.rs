//! Saliency signal for images without analytic ground truth: a small
//! encoder–decoder detector trained on the synthetic corpus, plus map
//! utilities shared with the attention machinery.

pub mod detector;
pub mod maps;

pub use detector::{train_detector, DetectorConfig, DetectorTrainConfig, SaliencyDetector, TrainedDetector};
pub use maps::{resize_map, RegionMask, ResizeMode};
