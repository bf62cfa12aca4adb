//! Evaluation metrics: action accuracy, semantic consistency via frame matching,
//! and feature-space statistics (FID, diversity, multimodality).

mod classifier;
mod features;
mod matching;
mod report;

pub use classifier::{
    per_action_accuracy, ClassifierConfig, ClassifierReport, SequenceClassifier, SpanAccuracy, SpanClassifier,
};
pub use features::{diversity, fid, fid_from_moments, moments, multimodality, FeatureSet};
pub use matching::{
    frame_distances, hungarian, nearest_sequence, semantic_consistency, sequence_distance, Assignment, LabelMatch,
};
pub use report::{mean_stderr, MetricReport, MetricValue};
