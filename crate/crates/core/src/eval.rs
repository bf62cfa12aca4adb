//! Benchmark protocol: sample label lists, generate with a trained model and
//! score the result against a ground-truth set, repeated over seeded draws.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    diversity, fid, multimodality, per_action_accuracy, semantic_consistency, FeatureSet, LabelMatch, MetricReport,
    SequenceClassifier,
};
use crate::model::{GaussianNoise, MotionVae};
use crate::motion::PoseSequence;
use crate::util::mix_seed;

pub const ACCURACY: &str = "accuracy";
pub const SEMANTIC_CONSISTENCY: &str = "semantic_consistency";
pub const FID: &str = "fid";
pub const DIVERSITY: &str = "diversity";
pub const MULTIMODALITY: &str = "multimodality";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Generated sequences per setting and repeat.
    pub num_samples: usize,
    /// Total frames per generated sequence; one setting per entry.
    pub lengths: Vec<usize>,
    /// Action counts per generated sequence; one setting per entry.
    pub actions_per_seq: Vec<usize>,
    pub repeats: usize,
    /// Pair count for diversity and multimodality.
    pub pairs: usize,
    pub label_match: LabelMatch,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_samples: 40,
            lengths: vec![60],
            actions_per_seq: vec![2],
            repeats: 5,
            pairs: 200,
            label_match: LabelMatch::Ordered,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.repeats == 0 || self.pairs == 0 {
            return Err(Error::Config("num_samples, repeats and pairs must be positive".into()));
        }
        if self.lengths.is_empty() || self.actions_per_seq.is_empty() {
            return Err(Error::Config("at least one length and one action count are required".into()));
        }
        for &k in &self.actions_per_seq {
            if k == 0 {
                return Err(Error::Config("action counts must be positive".into()));
            }
            if let Some(&t) = self.lengths.iter().find(|&&t| t < k) {
                return Err(Error::Config(format!("{t} frames cannot hold {k} actions")));
            }
        }
        Ok(())
    }
}

/// Aggregated metrics for one `(frames, actions)` setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub frames: usize,
    pub actions: usize,
    pub report: MetricReport,
}

/// Draws `count` label lists of length `k` with no label repeated back to back.
pub fn sample_label_lists(num_classes: usize, k: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if num_classes == 0 || (k > 1 && num_classes < 2) {
        return Err(Error::Config(format!("cannot draw {k} alternating labels from {num_classes} classes")));
    }
    Ok((0..count)
        .map(|_| {
            let mut labels: Vec<usize> = Vec::with_capacity(k);
            for _ in 0..k {
                let next = match labels.last() {
                    None => rng.random_range(0..num_classes),
                    Some(&p) => {
                        let l = rng.random_range(0..num_classes - 1);
                        l + usize::from(l >= p)
                    }
                };
                labels.push(next);
            }
            labels
        })
        .collect())
}

/// Generates one sequence per label list; sequence `i` uses noise seed `mix_seed(seed, i + 1)`.
pub fn generate_set(model: &MotionVae, label_lists: &[Vec<usize>], frames: usize, seed: u64) -> Result<Vec<PoseSequence>> {
    label_lists
        .iter()
        .enumerate()
        .map(|(i, labels)| model.generate(labels, frames, &mut GaussianNoise::new(mix_seed(seed, i as u64 + 1))))
        .collect()
}

/// Classifier features of every span long enough for the classifier.
pub fn span_features(classifier: &SequenceClassifier, set: &[PoseSequence]) -> Result<FeatureSet> {
    let min = classifier.config().crop_len;
    let mut spans: Vec<ArrayView2<f64>> = Vec::new();
    let mut labels = Vec::new();
    for seq in set {
        for seg in seq.script.segments().iter().filter(|s| s.len() >= min) {
            spans.push(seq.span(seg.start, seg.end));
            labels.push(seg.label);
        }
    }
    if spans.is_empty() {
        return Err(Error::Input("no span is long enough to extract features".into()));
    }
    let mut features = Array2::zeros((spans.len(), classifier.feature_dim()));
    for (chunk_idx, chunk) in spans.chunks(64).enumerate() {
        let (f, _) = classifier.embed(chunk)?;
        let start = chunk_idx * 64;
        features.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&f);
    }
    FeatureSet::new(features, labels)
}

/// Scores one generated set against the ground truth.
pub fn score_set(
    generated: &[PoseSequence],
    gt: &[PoseSequence],
    gt_features: &FeatureSet,
    classifier: &SequenceClassifier,
    config: &EvalConfig,
    rng: &mut impl Rng,
) -> Result<Vec<(&'static str, f64)>> {
    let accuracy = per_action_accuracy(classifier, generated)?.accuracy;
    let consistency = semantic_consistency(generated, gt, config.label_match)?;
    let features = span_features(classifier, generated)?;
    Ok(vec![
        (ACCURACY, accuracy),
        (SEMANTIC_CONSISTENCY, consistency),
        (FID, fid(&features, gt_features)?),
        (DIVERSITY, diversity(&features, config.pairs, rng)?),
        (MULTIMODALITY, multimodality(&features, config.pairs, rng)?),
    ])
}

/// Runs every `(length, action count)` setting `config.repeats` times and
/// reports mean and standard error per metric.
pub fn evaluate(
    model: &MotionVae,
    classifier: &SequenceClassifier,
    gt: &[PoseSequence],
    config: &EvalConfig,
) -> Result<Vec<EvalResult>> {
    config.validate()?;
    if gt.is_empty() {
        return Err(Error::Input("ground-truth set is empty".into()));
    }
    let num_classes = model.config().num_classes;
    if classifier.num_classes() != num_classes {
        return Err(Error::Input(format!(
            "classifier has {} classes but the model has {num_classes}",
            classifier.num_classes()
        )));
    }
    let gt_features = span_features(classifier, gt)?;
    let mut results = Vec::new();
    let mut setting = 0u64;
    for &actions in &config.actions_per_seq {
        for &frames in &config.lengths {
            setting += 1;
            let mut samples: Vec<Vec<f64>> = Vec::new();
            let mut names: Vec<&'static str> = Vec::new();
            for repeat in 0..config.repeats {
                let seed = mix_seed(mix_seed(config.seed, setting), repeat as u64 + 1);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let labels = sample_label_lists(num_classes, actions, config.num_samples, &mut rng)?;
                let generated = generate_set(model, &labels, frames, seed)?;
                let scores = score_set(&generated, gt, &gt_features, classifier, config, &mut rng)?;
                if samples.is_empty() {
                    names = scores.iter().map(|s| s.0).collect();
                    samples = vec![Vec::new(); scores.len()];
                }
                for (slot, (_, v)) in samples.iter_mut().zip(scores) {
                    slot.push(v);
                }
                log::info!("evaluated frames={frames} actions={actions} repeat={repeat}");
            }
            let mut report = MetricReport::default();
            for (name, values) in names.into_iter().zip(&samples) {
                report.push_samples(name, values);
            }
            results.push(EvalResult { frames, actions, report });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn label_lists_never_repeat_back_to_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lists = sample_label_lists(2, 6, 50, &mut rng).unwrap();
        for l in &lists {
            assert_eq!(l.len(), 6);
            assert!(l.windows(2).all(|w| w[0] != w[1]));
            assert!(l.iter().all(|&x| x < 2));
        }
        assert!(sample_label_lists(1, 2, 1, &mut rng).is_err());
        assert_eq!(sample_label_lists(1, 1, 2, &mut rng).unwrap(), vec![vec![0], vec![0]]);
    }

    #[test]
    fn generated_sets_are_reproducible() {
        let model = MotionVae::new(ModelConfig::default(), 1).unwrap();
        let lists = vec![vec![0, 1], vec![2]];
        let a = generate_set(&model, &lists, 30, 9).unwrap();
        let b = generate_set(&model, &lists, 30, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].script.labels(), vec![0, 1]);
        assert_eq!(a[1].len(), 30);
    }

    #[test]
    fn config_rejects_impossible_settings() {
        let bad = EvalConfig {
            lengths: vec![2],
            actions_per_seq: vec![3],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(EvalConfig::default().validate().is_ok());
    }
}
