//! VAE objective, the optimization loop and finite-difference gradient checks.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{GaussianNoise, MotionVae, Noise};
use crate::motion::PoseSequence;
use crate::params::{accumulate, clip_global_norm, Adam, ParamStore};
use crate::preprocess::{balanced_weights, WeightedSampler};
use crate::util::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub kl_weight: f64,
    pub recon_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kl_weight: 1e-5,
            recon_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite() && self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Draw sequences with probability inversely proportional to their label frequency.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-4,
            clip_norm: 1.0,
            seed: 0,
            balanced: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// `½ Σ (μ² + e^{logvar} − 1 − logvar)`.
pub fn kl_divergence(mu: ArrayView1<f64>, logvar: ArrayView1<f64>) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar.iter())
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Mean squared error over every entry.
pub fn reconstruction_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Input(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Batch-averaged loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Mean reconstruction MSE over the batch's sequences.
    pub recon: f64,
    /// Mean KL over the batch's posteriors.
    pub kl: f64,
    /// `recon_weight · recon + kl_weight · kl`.
    pub total: f64,
}

/// Loss and parameter gradients of one batch, accumulated in batch order.
///
/// Every sequence is drawn from `noise` in turn, so results depend only on the
/// noise source and batch order.
pub fn batch_gradients(
    model: &MotionVae,
    batch: &[&PoseSequence],
    weights: &LossWeights,
    noise: &mut dyn Noise,
    want_grads: bool,
) -> Result<(StepStats, Option<Vec<Array2<f64>>>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let b = batch.len() as f64;
    let posteriors: usize = batch.iter().map(|s| posterior_count(model, s)).sum();
    let p = posteriors as f64;
    let mut grads: Option<Vec<Array2<f64>>> = None;
    let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
    for seq in batch {
        let mut g = Graph::new(model.store());
        let out = model.forward_graph(&mut g, seq, noise)?;
        let target = g.constant(seq.frames.clone());
        let diff = g.sub(out.pred, target);
        let sq = g.square(diff);
        let mse = g.mean(sq);

        let mu2 = g.square(out.mu);
        let var = g.exp(out.logvar);
        let a = g.add(mu2, var);
        let a = g.sub(a, out.logvar);
        let a = g.add_scalar(a, -1.0);
        let kl_total = g.sum(a);
        let kl = g.scale(kl_total, 0.5);

        recon_sum += g.scalar(mse);
        kl_sum += g.scalar(kl);
        if want_grads {
            let r = g.scale(mse, weights.recon_weight / b);
            let k = g.scale(kl, weights.kl_weight / p);
            let loss = g.add(r, k);
            let sg = g.param_grads(loss);
            match grads.as_mut() {
                None => grads = Some(sg),
                Some(acc) => accumulate(acc, &sg),
            }
        }
    }
    let recon = recon_sum / b;
    let kl = kl_sum / p;
    let stats = StepStats {
        recon,
        kl,
        total: weights.recon_weight * recon + weights.kl_weight * kl,
    };
    Ok((stats, grads))
}

fn posterior_count(model: &MotionVae, seq: &PoseSequence) -> usize {
    match model.variant() {
        crate::model::Variant::BaselineSplit(_) => 1,
        _ => seq.script.len(),
    }
}

/// One clipped Adam update on `batch`.
pub fn train_step(
    model: &mut MotionVae,
    batch: &[&PoseSequence],
    weights: &LossWeights,
    optimizer: &mut Adam,
    clip_norm: f64,
    noise: &mut dyn Noise,
) -> Result<StepStats> {
    let step = optimizer.steps() as usize + 1;
    let (stats, grads) = batch_gradients(model, batch, weights, noise, true)?;
    let mut grads = grads.expect("gradients requested");
    if !stats.total.is_finite() {
        return Err(Error::Training {
            step,
            detail: format!("non-finite loss (recon {}, kl {})", stats.recon, stats.kl),
        });
    }
    let norm = clip_global_norm(&mut grads, clip_norm);
    if !norm.is_finite() {
        let worst = model
            .store()
            .iter()
            .zip(&grads)
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            .map(|((name, _), _)| name.to_string())
            .unwrap_or_default();
        return Err(Error::Training {
            step,
            detail: format!("non-finite gradient in `{worst}`"),
        });
    }
    optimizer.update(model.store_mut(), &grads);
    Ok(stats)
}

/// Per-step record of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: Vec<StepStats>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&StepStats> {
        self.steps.last()
    }
}

/// Runs `config.epochs` passes of `⌈N / batch_size⌉` steps each.
///
/// Without balancing every epoch visits a fresh permutation of the data; with
/// balancing each batch is drawn with replacement from the balanced weights.
/// When `log` is given one CSV row `step,recon,kl,total,wall_ms` is written per step.
pub fn train(
    model: &mut MotionVae,
    data: &[PoseSequence],
    config: &TrainConfig,
    weights: &LossWeights,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x7472_6169_6e));
    let sampler = if config.balanced {
        Some(WeightedSampler::new(&balanced_weights(data)?)?)
    } else {
        None
    };
    let mut optimizer = Adam::new(model.store(), config.learning_rate);
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let mut report = TrainReport::default();
    if let Some(w) = log.as_mut() {
        writeln!(w, "step,recon,kl,total,wall_ms")?;
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        if sampler.is_none() {
            order.shuffle(&mut order_rng);
        }
        for s in 0..steps_per_epoch {
            let idx: Vec<usize> = match &sampler {
                Some(ws) => (0..config.batch_size).map(|_| ws.sample(&mut order_rng)).collect(),
                None => order[s * config.batch_size..((s + 1) * config.batch_size).min(data.len())].to_vec(),
            };
            let batch: Vec<&PoseSequence> = idx.iter().map(|&i| &data[i]).collect();
            let step = report.steps.len() as u64;
            let mut noise = GaussianNoise::new(mix_seed(config.seed, step + 1));
            let stats = train_step(model, &batch, weights, &mut optimizer, config.clip_norm, &mut noise)?;
            if let Some(w) = log.as_mut() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    step + 1,
                    stats.recon,
                    stats.kl,
                    stats.total,
                    start.elapsed().as_millis()
                )?;
            }
            log::debug!("step {} recon {:.5} kl {:.4}", step + 1, stats.recon, stats.kl);
            report.steps.push(stats);
        }
    }
    Ok(report)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Parameter name and position of the worst coordinate.
    pub worst: (String, usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with a small absolute floor on the scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks `analytic` against central differences of `loss` at `coordinates`
/// randomly chosen scalar positions of the parameters `store_of(target)`.
pub fn check_gradient<T>(
    target: &mut T,
    store_of: impl Fn(&mut T) -> &mut ParamStore,
    analytic: &[Array2<f64>],
    mut loss: impl FnMut(&T) -> Result<f64>,
    eps: f64,
    coordinates: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let total = store_of(target).num_scalars();
    let n = coordinates.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        coordinates: n,
        worst: (String::new(), 0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for flat in picks {
        let (id, r, c) = store_of(target).locate(flat);
        let orig = store_of(target).get(id)[[r, c]];
        store_of(target).get_mut(id)[[r, c]] = orig + eps;
        let up = loss(target)?;
        store_of(target).get_mut(id)[[r, c]] = orig - eps;
        let down = loss(target)?;
        store_of(target).get_mut(id)[[r, c]] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[id.index()][[r, c]];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.worst.0.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = (store_of(target).name(id).to_string(), r, c);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Gradient check of the full training loss on `batch`, with the latent noise held fixed.
pub fn gradcheck(
    model: &mut MotionVae,
    batch: &[&PoseSequence],
    weights: &LossWeights,
    eps: f64,
    coordinates: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let noise_seed = mix_seed(seed, 1);
    let (_, grads) = batch_gradients(model, batch, weights, &mut GaussianNoise::new(noise_seed), true)?;
    let grads = grads.expect("gradients requested");
    check_gradient(
        model,
        |m| m.store_mut(),
        &grads,
        |m| {
            let (stats, _) = batch_gradients(m, batch, weights, &mut GaussianNoise::new(noise_seed), false)?;
            Ok(stats.total)
        },
        eps,
        coordinates,
        mix_seed(seed, 2),
    )
}

/// Mean absolute posterior mean and log-variance over a dataset.
pub fn posterior_magnitudes(model: &MotionVae, data: &[PoseSequence]) -> Result<(f64, f64)> {
    let (mut mu, mut lv, mut n) = (0.0, 0.0, 0usize);
    for seq in data {
        for d in model.encode_sequence(seq)? {
            mu += d.mu.iter().map(|v| v.abs()).sum::<f64>();
            lv += d.logvar.iter().map(|v| v.abs()).sum::<f64>();
            n += d.mu.len();
        }
    }
    Ok((mu / n as f64, lv / n as f64))
}

#[cfg(test)]
mod tests;
