//! A small temporal-convolution action classifier used as the feature extractor
//! for evaluation.
//!
//! A fixed-length crop of `L` frames is standardized per channel, convolved in
//! time (kernel `K`, unfold + matmul), passed through GELU, mean-pooled over
//! time, mapped to an `F`-dimensional feature layer and finally to class logits.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Linear;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::PoseSequence;
use crate::params::{clip_global_norm, Adam, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Frames per crop; shorter spans cannot be classified.
    pub crop_len: usize,
    pub kernel: usize,
    pub channels: usize,
    /// Width of the penultimate (feature) layer.
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random crops drawn per training segment per epoch.
    pub crops_per_segment: usize,
    /// Fraction of sequences held out for the accuracy report.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            crop_len: 16,
            kernel: 5,
            channels: 32,
            feature_dim: 16,
            epochs: 20,
            batch_size: 32,
            learning_rate: 3e-3,
            crops_per_segment: 2,
            holdout: 0.2,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.crop_len < self.kernel {
            return Err(Error::Config("crop_len must be at least the kernel size".into()));
        }
        if self.feature_dim < 2 || self.channels == 0 {
            return Err(Error::Config("feature_dim must be at least 2 and channels positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.crops_per_segment == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("epochs, batch_size, crops_per_segment and learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("holdout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Anything that can label a frame span.
pub trait SpanClassifier {
    /// Shortest span that can be classified.
    fn min_span(&self) -> usize;
    fn classify(&self, span: ArrayView2<f64>) -> Result<usize>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub train_accuracy: f64,
    /// `None` when nothing was held out.
    pub holdout_accuracy: Option<f64>,
    pub train_segments: usize,
    pub holdout_segments: usize,
}

#[derive(Clone, Debug)]
pub struct SequenceClassifier {
    config: ClassifierConfig,
    num_classes: usize,
    pose_dim: usize,
    input_mean: Array1<f64>,
    input_std: Array1<f64>,
    store: ParamStore,
    conv: Linear,
    hidden: Linear,
    output: Linear,
}

/// A labelled crop source: `(sequence, start, end, label)`.
type Span = (usize, usize, usize, usize);

fn labelled_spans(data: &[PoseSequence], seqs: &[usize], min_len: usize) -> Vec<Span> {
    seqs.iter()
        .flat_map(|&i| {
            data[i]
                .script
                .segments()
                .iter()
                .filter(|s| s.len() >= min_len)
                .map(move |s| (i, s.start, s.end, s.label))
        })
        .collect()
}

/// Offset of a centered `len`-frame window inside `span` frames.
fn center_offset(span: usize, len: usize) -> usize {
    (span - len) / 2
}

impl SequenceClassifier {
    fn init(config: ClassifierConfig, num_classes: usize, pose_dim: usize, mean: Array1<f64>, std: Array1<f64>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let conv = Linear::new(&mut store, "conv", config.kernel * pose_dim, config.channels, true, &mut rng);
        let hidden = Linear::new(&mut store, "feature", config.channels, config.feature_dim, true, &mut rng);
        let output = Linear::new(&mut store, "logits", config.feature_dim, num_classes, true, &mut rng);
        Self {
            config,
            num_classes,
            pose_dim,
            input_mean: mean,
            input_std: std,
            store,
            conv,
            hidden,
            output,
        }
    }

    /// Trains on ground-truth segments of `data`, holding out a fraction of sequences.
    pub fn train(data: &[PoseSequence], num_classes: usize, config: &ClassifierConfig) -> Result<(Self, ClassifierReport)> {
        config.validate()?;
        let first = data.first().ok_or_else(|| Error::Input("classifier training set is empty".into()))?;
        let pose_dim = first.pose_dim();
        if data.iter().any(|s| s.pose_dim() != pose_dim) {
            return Err(Error::Input("sequences disagree on pose dimension".into()));
        }
        for s in data {
            s.check_labels(num_classes)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let n_hold = ((data.len() as f64) * config.holdout).floor() as usize;
        let (hold, fit) = order.split_at(n_hold);
        let train_spans = labelled_spans(data, fit, config.crop_len);
        let hold_spans = labelled_spans(data, hold, config.crop_len);
        let mut classes: Vec<usize> = train_spans.iter().map(|s| s.3).collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "classifier training needs at least two classes with segments of {}+ frames",
                config.crop_len
            )));
        }

        let mut sum = Array1::<f64>::zeros(pose_dim);
        let mut sq = Array1::<f64>::zeros(pose_dim);
        let mut count = 0.0;
        for &i in fit {
            for row in data[i].frames.rows() {
                sum += &row;
                sq += &row.mapv(|v| v * v);
                count += 1.0;
            }
        }
        let mean = sum / count;
        let std = (sq / count - mean.mapv(|m| m * m)).mapv(|v| v.max(0.0).sqrt().max(1e-6));

        let mut model = Self::init(config.clone(), num_classes, pose_dim, mean, std);
        let mut opt = Adam::new(&model.store, config.learning_rate);
        let l = config.crop_len;
        for _ in 0..config.epochs {
            let mut crops: Vec<(usize, usize, usize)> = Vec::new();
            for &(seq, start, end, label) in &train_spans {
                for _ in 0..config.crops_per_segment {
                    let offset = rng.random_range(0..=(end + 1 - start - l));
                    crops.push((seq, start + offset, label));
                }
            }
            crops.shuffle(&mut rng);
            for chunk in crops.chunks(config.batch_size) {
                let views: Vec<ArrayView2<f64>> = chunk
                    .iter()
                    .map(|&(seq, start, _)| data[seq].frames.slice(s![start..start + l, ..]))
                    .collect();
                let labels: Vec<usize> = chunk.iter().map(|c| c.2).collect();
                let mut g = Graph::new(&model.store);
                let (_, logits) = model.forward(&mut g, &views);
                let logp = g.log_softmax_rows(logits);
                let mut onehot = Array2::zeros((labels.len(), num_classes));
                for (r, &y) in labels.iter().enumerate() {
                    onehot[[r, y]] = -1.0 / labels.len() as f64;
                }
                let onehot = g.constant(onehot);
                let picked = g.mul(logp, onehot);
                let loss = g.sum(picked);
                let mut grads = g.param_grads(loss);
                clip_global_norm(&mut grads, 5.0);
                opt.update(&mut model.store, &grads);
            }
        }

        let accuracy = |spans: &[Span]| -> Result<Option<f64>> {
            if spans.is_empty() {
                return Ok(None);
            }
            let mut hits = 0;
            for &(seq, start, end, label) in spans {
                if model.classify(data[seq].span(start, end))? == label {
                    hits += 1;
                }
            }
            Ok(Some(hits as f64 / spans.len() as f64))
        };
        let report = ClassifierReport {
            train_accuracy: accuracy(&train_spans)?.unwrap_or(0.0),
            holdout_accuracy: accuracy(&hold_spans)?,
            train_segments: train_spans.len(),
            holdout_segments: hold_spans.len(),
        };
        Ok((model, report))
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// `(features, logits)` for a batch of `crop_len×D` crops.
    fn forward(&self, g: &mut Graph, crops: &[ArrayView2<f64>]) -> (Var, Var) {
        let (l, k, d) = (self.config.crop_len, self.config.kernel, self.pose_dim);
        let positions = l - k + 1;
        let n = crops.len();
        let mut unfolded = Array2::zeros((n * positions, k * d));
        for (c, crop) in crops.iter().enumerate() {
            let norm = (crop - &self.input_mean) / &self.input_std;
            for p in 0..positions {
                let mut row = unfolded.row_mut(c * positions + p);
                for dt in 0..k {
                    row.slice_mut(s![dt * d..(dt + 1) * d]).assign(&norm.row(p + dt));
                }
            }
        }
        let mut pool = Array2::zeros((n, n * positions));
        for c in 0..n {
            pool.slice_mut(s![c, c * positions..(c + 1) * positions]).fill(1.0 / positions as f64);
        }
        let x = g.constant(unfolded);
        let h = self.conv.graph(g, x);
        let h = g.gelu(h);
        let pool = g.constant(pool);
        let pooled = g.matmul(pool, h);
        let f = self.hidden.graph(g, pooled);
        let f = g.gelu(f);
        let logits = self.output.graph(g, f);
        (f, logits)
    }

    fn center_crop<'a>(&self, span: ArrayView2<'a, f64>) -> Result<ArrayView2<'a, f64>> {
        let l = self.config.crop_len;
        if span.nrows() < l {
            return Err(Error::Input(format!("span of {} frames is shorter than the {l}-frame crop", span.nrows())));
        }
        if span.ncols() != self.pose_dim {
            return Err(Error::Input(format!(
                "span has pose dimension {} but the classifier expects {}",
                span.ncols(),
                self.pose_dim
            )));
        }
        let o = center_offset(span.nrows(), l);
        Ok(span.slice_move(s![o..o + l, ..]))
    }

    /// Penultimate-layer features and logits of each span's center crop.
    pub fn embed(&self, spans: &[ArrayView2<f64>]) -> Result<(Array2<f64>, Array2<f64>)> {
        let crops = spans.iter().map(|s| self.center_crop(*s)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new(&self.store);
        let (f, logits) = self.forward(&mut g, &crops);
        Ok((g.value(f).clone(), g.value(logits).clone()))
    }

    pub fn features(&self, span: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.embed(&[span])?.0.index_axis_move(Axis(0), 0))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ClassifierFile {
            format: CLASSIFIER_FORMAT.to_string(),
            config: self.config.clone(),
            num_classes: self.num_classes,
            pose_dim: self.pose_dim,
            input_mean: self.input_mean.to_vec(),
            input_std: self.input_std.to_vec(),
            tensors: self
                .store
                .iter()
                .map(|(name, v)| (name.to_string(), [v.nrows(), v.ncols()], v.iter().copied().collect()))
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClassifierFile = serde_json::from_str(text).map_err(|e| Error::parse("classifier", e.to_string()))?;
        if file.format != CLASSIFIER_FORMAT {
            return Err(Error::parse("format", format!("expected `{CLASSIFIER_FORMAT}`")));
        }
        file.config.validate()?;
        if file.input_mean.len() != file.pose_dim || file.input_std.len() != file.pose_dim {
            return Err(Error::parse("input_mean", "length does not match pose_dim"));
        }
        let mut model = Self::init(
            file.config,
            file.num_classes,
            file.pose_dim,
            Array1::from(file.input_mean),
            Array1::from(file.input_std),
        );
        let ids: Vec<_> = model.store.ids().collect();
        if ids.len() != file.tensors.len() {
            return Err(Error::parse("tensors", "wrong number of tensors"));
        }
        for (i, (id, (name, shape, data))) in ids.into_iter().zip(file.tensors).enumerate() {
            if name != model.store.name(id) || (shape[0], shape[1]) != model.store.get(id).dim() {
                return Err(Error::parse(format!("tensors[{i}]"), format!("unexpected tensor `{name}` {shape:?}")));
            }
            *model.store.get_mut(id) = Array2::from_shape_vec((shape[0], shape[1]), data)
                .map_err(|_| Error::parse(format!("tensors[{i}].data"), "length does not match shape"))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn parameters(&self) -> &ParamStore {
        &self.store
    }
}

const CLASSIFIER_FORMAT: &str = "motion-vae-classifier";

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    config: ClassifierConfig,
    num_classes: usize,
    pose_dim: usize,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    tensors: Vec<(String, [usize; 2], Vec<f64>)>,
}

impl SpanClassifier for SequenceClassifier {
    fn min_span(&self) -> usize {
        self.config.crop_len
    }

    fn classify(&self, span: ArrayView2<f64>) -> Result<usize> {
        let (_, logits) = self.embed(&[span])?;
        let row = logits.row(0);
        Ok(row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0)
    }
}

/// Accuracy of a classifier over the recorded spans of generated sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanAccuracy {
    pub accuracy: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Classifies every recorded span; spans shorter than the classifier's minimum are skipped.
pub fn per_action_accuracy(classifier: &dyn SpanClassifier, generated: &[PoseSequence]) -> Result<SpanAccuracy> {
    let (mut hits, mut evaluated, mut skipped) = (0, 0, 0);
    for seq in generated {
        for seg in seq.script.segments() {
            if seg.len() < classifier.min_span() {
                log::warn!(
                    "skipping a {}-frame span shorter than the classifier minimum of {}",
                    seg.len(),
                    classifier.min_span()
                );
                skipped += 1;
                continue;
            }
            evaluated += 1;
            if classifier.classify(seq.span(seg.start, seg.end))? == seg.label {
                hits += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::Input("no span was long enough to classify".into()));
    }
    Ok(SpanAccuracy {
        accuracy: hits as f64 / evaluated as f64,
        evaluated,
        skipped,
    })
}
