//! Conditional VAE over recurrent linear-attention stacks.
//!
//! The encoder reads `(pose ⊕ action embedding)` frames causally and emits
//! Gaussian posterior parameters; one posterior per action is kept, taken at
//! the action's last frame. A latent is drawn per action, shifted by a learned
//! action embedding, and the stacked latents form the memory that the decoder
//! cross-attends to while it turns positional queries into poses.
//!
//! Two execution paths share the parameters:
//!
//! * [`MotionVae::forward_graph`] builds the whole sequence on an autodiff tape
//!   for training;
//! * [`MotionVae::encode_sequence`], [`DecoderStream`] and friends run frame by
//!   frame with fixed-size recurrent state for inference.

mod checkpoint;
mod config;
mod noise;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    block_parallel, block_step, sinusoidal_embedding, sinusoidal_table, BlockParams, LayerNormParams, Linear,
    MemoryVar, ProjectedMemory, RecurrentState,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::{ActionScript, PoseSequence};
use crate::params::{ParamId, ParamStore};

pub use checkpoint::{load_checkpoint, model_from_json, model_to_json, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Variant};
pub use noise::{ConstNoise, GaussianNoise, Noise};

/// Gaussian posterior for one action.
#[derive(Clone, Debug, PartialEq)]
pub struct DistParams {
    pub mu: Array1<f64>,
    pub logvar: Array1<f64>,
    pub label: usize,
    pub end_frame: usize,
}

impl DistParams {
    pub fn sigma(&self) -> Array1<f64> {
        self.logvar.mapv(|v| (0.5 * v).exp())
    }
}

/// Per-frame redraw parameters for [`Variant::AllDiffLatent`].
#[derive(Clone, Debug, PartialEq)]
pub struct Resample {
    /// Mean of each action latent, embedding included.
    pub center: Array2<f64>,
    pub scale: Array2<f64>,
}

/// One latent row per action, in script order, with action embeddings added.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub z: Array2<f64>,
    pub labels: Vec<usize>,
    pub resample: Option<Resample>,
}

impl LatentSet {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }
}

/// Parameter handles of a [`MotionVae`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder_action: ParamId,
    pub encoder_input: Linear,
    pub encoder_blocks: Vec<BlockParams>,
    pub encoder_norm: LayerNormParams,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub latent_action: ParamId,
    pub split_projection: Option<Linear>,
    pub decoder_blocks: Vec<BlockParams>,
    pub decoder_norm: LayerNormParams,
    pub output_head: Linear,
}

/// Differentiable outputs of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct GraphOutputs {
    /// `T×D` reconstruction.
    pub pred: Var,
    /// `P×d` posterior means, one row per captured posterior.
    pub mu: Var,
    pub logvar: Var,
}

pub struct MotionVae {
    config: ModelConfig,
    store: ParamStore,
    params: ModelParams,
}

/// Splits `z` into `m` contiguous chunks of `⌊d/m⌋` entries; trailing entries are dropped.
pub fn baseline_split_latent(z: ArrayView1<f64>, m: usize) -> Result<Vec<Array1<f64>>> {
    if m == 0 || z.len() < m {
        return Err(Error::Config(format!(
            "cannot split a {}-dimensional latent into {m} chunks",
            z.len()
        )));
    }
    let w = z.len() / m;
    Ok((0..m).map(|i| z.slice(s![i * w..(i + 1) * w]).to_owned()).collect())
}

/// Segment whose latent a frame sees when attention is restricted to the active action.
///
/// Among segments covering `t` the most recently started wins; frames outside
/// every segment use the closest earlier segment, or the first one.
pub fn active_segment(script: &ActionScript, t: usize) -> usize {
    let segs = script.segments();
    let covering = segs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.contains(t))
        .max_by_key(|(i, s)| (s.start, *i))
        .map(|(i, _)| i);
    covering
        .or_else(|| {
            segs.iter()
                .enumerate()
                .filter(|(_, s)| s.end < t)
                .max_by_key(|(i, s)| (s.end, *i))
                .map(|(i, _)| i)
        })
        .unwrap_or(0)
}

impl MotionVae {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (enc, dec) = (&c.encoder, &c.decoder);
        let d = c.latent_dim;

        let encoder_action = store.add_normal("encoder.action_embedding", c.num_classes, c.action_embed_dim, 1.0, &mut rng);
        let encoder_input = Linear::new(&mut store, "encoder.input", c.pose_dim() + c.action_embed_dim, enc.model_dim, true, &mut rng);
        let encoder_blocks = (0..enc.layers)
            .map(|l| BlockParams::new(&mut store, &format!("encoder.block{l}"), enc, None, &mut rng))
            .collect();
        let encoder_norm = LayerNormParams::new(&mut store, "encoder.norm", enc.model_dim);
        let mu_head = Linear::new(&mut store, "encoder.mu", enc.model_dim, d, true, &mut rng);
        let logvar_head = Linear::new(&mut store, "encoder.logvar", enc.model_dim, d, true, &mut rng);
        let latent_action = store.add_normal("latent.action_embedding", c.num_classes, d, 1.0, &mut rng);
        let split_projection = match c.variant {
            Variant::BaselineSplit(m) => Some(Linear::new(&mut store, "latent.split", d / m, d, true, &mut rng)),
            _ => None,
        };
        let decoder_blocks = (0..dec.layers)
            .map(|l| BlockParams::new(&mut store, &format!("decoder.block{l}"), dec, Some(d), &mut rng))
            .collect();
        let decoder_norm = LayerNormParams::new(&mut store, "decoder.norm", dec.model_dim);
        let output_head = Linear::new(&mut store, "decoder.output", dec.model_dim, c.pose_dim(), true, &mut rng);

        let params = ModelParams {
            encoder_action,
            encoder_input,
            encoder_blocks,
            encoder_norm,
            mu_head,
            logvar_head,
            latent_action,
            split_projection,
            decoder_blocks,
            decoder_norm,
            output_head,
        };
        Ok(Self { config, store, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.config.num_classes) {
            Some(l) => Err(Error::Input(format!(
                "action label {l} is outside the model's {} classes",
                self.config.num_classes
            ))),
            None => Ok(()),
        }
    }

    fn check_sequence(&self, seq: &PoseSequence) -> Result<()> {
        if seq.pose_dim() != self.config.pose_dim() {
            return Err(Error::Input(format!(
                "sequence has pose dimension {} but the model expects {}",
                seq.pose_dim(),
                self.config.pose_dim()
            )));
        }
        if let Variant::BaselineSplit(m) = self.config.variant {
            if seq.script.len() > m {
                return Err(Error::Input(format!(
                    "sequence has {} actions but the split baseline holds at most {m}",
                    seq.script.len()
                )));
            }
        }
        self.check_labels(&seq.script.labels())
    }

    /// `T×C` weights: row `t` averages the one-hot labels of segments active at `t`.
    fn action_mix(&self, script: &ActionScript, frames: usize) -> Array2<f64> {
        let mut mix = Array2::zeros((frames, self.config.num_classes));
        for t in 0..frames {
            let active: Vec<usize> = script.active_at(t).collect();
            for &i in &active {
                mix[[t, script.segments()[i].label]] += 1.0 / active.len() as f64;
            }
        }
        mix
    }

    /// Rows select (or average) the per-frame encoder outputs kept as posteriors.
    fn capture_matrix(&self, script: &ActionScript, frames: usize) -> (Array2<f64>, Vec<(usize, usize)>) {
        let segs = script.segments();
        match self.config.variant {
            Variant::BaselineSplit(_) => {
                let mut c = Array2::zeros((1, frames));
                c[[0, frames - 1]] = 1.0;
                (c, vec![(segs[segs.len() - 1].label, frames - 1)])
            }
            Variant::AverageStats => {
                let mut c = Array2::zeros((segs.len(), frames));
                for (i, seg) in segs.iter().enumerate() {
                    c.slice_mut(s![i, seg.start..=seg.end]).fill(1.0 / seg.len() as f64);
                }
                (c, segs.iter().map(|s| (s.label, s.end)).collect())
            }
            _ => {
                let mut c = Array2::zeros((segs.len(), frames));
                for (i, seg) in segs.iter().enumerate() {
                    c[[i, seg.end]] = 1.0;
                }
                (c, segs.iter().map(|s| (s.label, s.end)).collect())
            }
        }
    }

    /// Fixed code marking each memory row with its position in the script.
    ///
    /// The first half of the columns encodes the index from the front and the
    /// second half the index from the back, so every row also sees `k`.
    pub fn slot_code(&self, k: usize) -> Array2<f64> {
        let d = self.config.latent_dim;
        let half = d / 2;
        let table = sinusoidal_table(0, k, half, self.config.position_base);
        let mut code = Array2::zeros((k, d));
        for i in 0..k {
            code.slice_mut(s![i, ..half]).assign(&table.row(i));
            code.slice_mut(s![i, half..2 * half]).assign(&table.row(k - 1 - i));
        }
        code
    }

    fn latent_embedding(&self, labels: &[usize]) -> Array2<f64> {
        self.store.get(self.params.latent_action).select(Axis(0), labels)
    }

    /// Final-norm encoder features for every frame, computed recurrently.
    pub fn encoder_features(&self, seq: &PoseSequence) -> Result<Array2<f64>> {
        self.check_sequence(seq)?;
        let cfg = &self.config.encoder;
        let frames = seq.len();
        let action = self.action_mix(&seq.script, frames).dot(self.store.get(self.params.encoder_action));
        let mut state = RecurrentState::new(cfg);
        let mut out = Array2::zeros((frames, cfg.model_dim));
        let mut input = Array1::zeros(self.config.pose_dim() + self.config.action_embed_dim);
        for t in 0..frames {
            input.slice_mut(s![..self.config.pose_dim()]).assign(&seq.frame(t));
            input.slice_mut(s![self.config.pose_dim()..]).assign(&action.row(t));
            let mut x = self.params.encoder_input.apply(&self.store, input.view());
            x += &sinusoidal_embedding(t, cfg.model_dim, self.config.position_base);
            for (block, heads) in self.params.encoder_blocks.iter().zip(state.layers.iter_mut()) {
                x = block_step(&self.store, block, cfg, heads, x.view(), None);
            }
            out.row_mut(t).assign(&self.params.encoder_norm.apply(&self.store, x.view()));
        }
        Ok(out)
    }

    /// Posterior parameters per action (one in total for the split baseline).
    pub fn encode_sequence(&self, seq: &PoseSequence) -> Result<Vec<DistParams>> {
        let features = self.encoder_features(seq)?;
        let (capture, meta) = self.capture_matrix(&seq.script, seq.len());
        let pooled = capture.dot(&features);
        let mu = self.params.mu_head.apply_rows(&self.store, pooled.view());
        let logvar = self.params.logvar_head.apply_rows(&self.store, pooled.view());
        Ok(meta
            .into_iter()
            .enumerate()
            .map(|(i, (label, end_frame))| DistParams {
                mu: mu.row(i).to_owned(),
                logvar: logvar.row(i).to_owned(),
                label,
                end_frame,
            })
            .collect())
    }

    fn split_latents(&self, z: ArrayView1<f64>, labels: &[usize]) -> Result<Array2<f64>> {
        let Variant::BaselineSplit(m) = self.config.variant else {
            unreachable!("split latents requested for a non-baseline variant")
        };
        if labels.len() > m {
            return Err(Error::Input(format!(
                "{} actions requested but the split baseline holds at most {m}",
                labels.len()
            )));
        }
        let chunks = baseline_split_latent(z, m)?;
        let w = self.config.latent_dim / m;
        let mut stacked = Array2::zeros((labels.len(), w));
        for (i, chunk) in chunks.iter().take(labels.len()).enumerate() {
            stacked.row_mut(i).assign(chunk);
        }
        let proj = self.params.split_projection.as_ref().expect("baseline has a split projection");
        Ok(proj.apply_rows(&self.store, stacked.view()) + self.latent_embedding(labels))
    }

    /// Reparameterized draw `μ + σ⊙ε` per action, plus the action embeddings.
    pub fn sample_latents(&self, dists: &[DistParams], labels: &[usize], noise: &mut dyn Noise) -> Result<LatentSet> {
        self.check_labels(labels)?;
        if labels.is_empty() || dists.is_empty() {
            return Err(Error::Input("at least one action is required".into()));
        }
        let d = self.config.latent_dim;
        if let Variant::BaselineSplit(_) = self.config.variant {
            let dist = &dists[0];
            let eps = noise.standard_normal(1, d);
            let z = &dist.mu + &(dist.sigma() * eps.row(0));
            return Ok(LatentSet {
                z: self.split_latents(z.view(), labels)?,
                labels: labels.to_vec(),
                resample: None,
            });
        }
        if dists.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} posteriors for {} actions",
                dists.len(),
                labels.len()
            )));
        }
        let k = labels.len();
        let mut mu = Array2::zeros((k, d));
        let mut sigma = Array2::zeros((k, d));
        for (i, dist) in dists.iter().enumerate() {
            mu.row_mut(i).assign(&dist.mu);
            sigma.row_mut(i).assign(&dist.sigma());
        }
        let eps = match self.config.variant {
            Variant::SingleLatent => {
                let one = noise.standard_normal(1, d);
                Array2::from_shape_fn((k, d), |(_, j)| one[[0, j]])
            }
            _ => noise.standard_normal(k, d),
        };
        let center = mu + self.latent_embedding(labels);
        let z = &center + &(&sigma * &eps);
        let resample = (self.config.variant == Variant::AllDiffLatent).then_some(Resample { center, scale: sigma });
        Ok(LatentSet {
            z,
            labels: labels.to_vec(),
            resample,
        })
    }

    /// Latents drawn from the standard-normal prior.
    pub fn prior_latents(&self, labels: &[usize], noise: &mut dyn Noise) -> Result<LatentSet> {
        let d = self.config.latent_dim;
        let unit = |label| DistParams {
            mu: Array1::zeros(d),
            logvar: Array1::zeros(d),
            label,
            end_frame: 0,
        };
        let dists: Vec<DistParams> = match self.config.variant {
            Variant::BaselineSplit(_) => vec![unit(labels.first().copied().unwrap_or(0))],
            _ => labels.iter().map(|&l| unit(l)).collect(),
        };
        self.sample_latents(&dists, labels, noise)
    }

    /// Streams decoded frames one at a time.
    ///
    /// `script` gives action boundaries and is required only when each frame
    /// attends to its active action alone.
    pub fn decoder_stream<'a>(
        &'a self,
        latents: &LatentSet,
        script: Option<&ActionScript>,
        noise: &'a mut dyn Noise,
    ) -> Result<DecoderStream<'a>> {
        if latents.is_empty() {
            return Err(Error::Input("cannot decode from an empty latent set".into()));
        }
        if latents.z.ncols() != self.config.latent_dim {
            return Err(Error::Input(format!(
                "latents have width {} but the model uses {}",
                latents.z.ncols(),
                self.config.latent_dim
            )));
        }
        let slots = self.slot_code(latents.len());
        let memory = match self.config.variant {
            Variant::NoLookBackAhead => {
                let script = script.ok_or_else(|| {
                    Error::Input("decoding restricted to the active action needs action boundaries".into())
                })?;
                if script.len() != latents.len() {
                    return Err(Error::Input(format!(
                        "script has {} actions but {} latents were given",
                        script.len(),
                        latents.len()
                    )));
                }
                StreamMemory::Active {
                    rows: &latents.z + &slots,
                    script: script.clone(),
                }
            }
            Variant::AllDiffLatent => {
                let r = latents
                    .resample
                    .as_ref()
                    .ok_or_else(|| Error::Input("per-frame latents need resampling parameters".into()))?;
                StreamMemory::Resample {
                    center: &r.center + &slots,
                    scale: r.scale.clone(),
                }
            }
            _ => StreamMemory::Shared(self.project_memory(&(&latents.z + &slots))),
        };
        Ok(DecoderStream {
            model: self,
            state: RecurrentState::new(&self.config.decoder),
            memory,
            noise,
            t: 0,
        })
    }

    fn project_memory(&self, rows: &Array2<f64>) -> Vec<ProjectedMemory> {
        self.params
            .decoder_blocks
            .iter()
            .map(|b| ProjectedMemory::new(&self.store, b.cross.as_ref().expect("decoder blocks cross-attend"), rows.view()))
            .collect()
    }

    /// `frames×D` poses decoded from `latents`.
    pub fn decode_sequence(
        &self,
        latents: &LatentSet,
        frames: usize,
        script: Option<&ActionScript>,
        noise: &mut dyn Noise,
    ) -> Result<Array2<f64>> {
        if frames == 0 {
            return Err(Error::Input("cannot decode zero frames".into()));
        }
        let mut stream = self.decoder_stream(latents, script, noise)?;
        let mut out = Array2::zeros((frames, self.config.pose_dim()));
        for t in 0..frames {
            out.row_mut(t).assign(&stream.next_frame());
        }
        Ok(out)
    }

    /// Samples a sequence performing `labels` in order over `frames` frames.
    ///
    /// The returned script records an equal split of the frames across the
    /// actions; it is bookkeeping for evaluation and only steers decoding for
    /// the active-action-only variant.
    pub fn generate(&self, labels: &[usize], frames: usize, noise: &mut dyn Noise) -> Result<PoseSequence> {
        self.check_labels(labels)?;
        let script = ActionScript::equal_partition(labels, frames)?;
        let latents = self.prior_latents(labels, noise)?;
        let poses = self.decode_sequence(&latents, frames, Some(&script), noise)?;
        PoseSequence::new(poses, script, self.config.skeleton)
    }

    /// Encode, sample and decode `seq`.
    pub fn reconstruct(&self, seq: &PoseSequence, noise: &mut dyn Noise) -> Result<Array2<f64>> {
        let dists = self.encode_sequence(seq)?;
        let labels = seq.script.labels();
        let latents = self.sample_latents(&dists, &labels, noise)?;
        self.decode_sequence(&latents, seq.len(), Some(&seq.script), noise)
    }

    fn encoder_graph(&self, g: &mut Graph, seq: &PoseSequence) -> Var {
        let cfg = &self.config.encoder;
        let frames = seq.len();
        let mix = g.constant(self.action_mix(&seq.script, frames));
        let table = g.param(self.params.encoder_action);
        let action = g.matmul(mix, table);
        let pose = g.constant(seq.frames.clone());
        let input = g.concat_cols(&[pose, action]);
        let x = self.params.encoder_input.graph(g, input);
        let pe = g.constant(sinusoidal_table(0, frames, cfg.model_dim, self.config.position_base));
        let mut x = g.add(x, pe);
        for block in &self.params.encoder_blocks {
            x = block_parallel(g, block, cfg, x, None);
        }
        self.params.encoder_norm.graph(g, x)
    }

    fn decoder_graph(&self, g: &mut Graph, frames: usize, memory: MemoryVar) -> Var {
        let cfg = &self.config.decoder;
        let mut x = g.constant(sinusoidal_table(0, frames, cfg.model_dim, self.config.position_base));
        for block in &self.params.decoder_blocks {
            x = block_parallel(g, block, cfg, x, Some(memory));
        }
        let x = self.params.decoder_norm.graph(g, x);
        self.params.output_head.graph(g, x)
    }

    /// Whole-sequence reconstruction on the tape, with posteriors.
    pub fn forward_graph(&self, g: &mut Graph, seq: &PoseSequence, noise: &mut dyn Noise) -> Result<GraphOutputs> {
        self.check_sequence(seq)?;
        let frames = seq.len();
        let d = self.config.latent_dim;
        let labels = seq.script.labels();
        let k = labels.len();

        let features = self.encoder_graph(g, seq);
        let (capture, _) = self.capture_matrix(&seq.script, frames);
        let capture = g.constant(capture);
        let pooled = g.matmul(capture, features);
        let mu = self.params.mu_head.graph(g, pooled);
        let logvar = self.params.logvar_head.graph(g, pooled);
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);

        let table = g.param(self.params.latent_action);
        let emb = g.gather(table, &labels);
        let slots = g.constant(self.slot_code(k));
        let offset = g.add(emb, slots);

        let memory = match self.config.variant {
            Variant::AllDiffLatent => {
                let eps = g.constant(noise.standard_normal(frames * k, d));
                let mu_t = g.repeat_rows(mu, frames);
                let sigma_t = g.repeat_rows(sigma, frames);
                let offset_t = g.repeat_rows(offset, frames);
                let spread = g.mul(sigma_t, eps);
                let z = g.add(mu_t, spread);
                MemoryVar::PerFrame(g.add(z, offset_t), k)
            }
            Variant::BaselineSplit(m) => {
                let eps = g.constant(noise.standard_normal(1, d));
                let spread = g.mul(sigma, eps);
                let z = g.add(mu, spread);
                let w = d / m;
                let chunks: Vec<Var> = (0..k).map(|i| g.slice_cols(z, i * w, w)).collect();
                let stacked = g.concat_rows(&chunks);
                let proj = self.params.split_projection.as_ref().expect("baseline has a split projection");
                let z = proj.graph(g, stacked);
                MemoryVar::Shared(g.add(z, offset))
            }
            variant => {
                let eps = match variant {
                    Variant::SingleLatent => {
                        let one = noise.standard_normal(1, d);
                        Array2::from_shape_fn((k, d), |(_, j)| one[[0, j]])
                    }
                    _ => noise.standard_normal(k, d),
                };
                let eps = g.constant(eps);
                let spread = g.mul(sigma, eps);
                let z = g.add(mu, spread);
                let z = g.add(z, offset);
                if variant == Variant::NoLookBackAhead {
                    let rows: Vec<usize> = (0..frames).map(|t| active_segment(&seq.script, t)).collect();
                    MemoryVar::PerFrame(g.gather(z, &rows), 1)
                } else {
                    MemoryVar::Shared(z)
                }
            }
        };
        let pred = self.decoder_graph(g, frames, memory);
        Ok(GraphOutputs { pred, mu, logvar })
    }
}

enum StreamMemory {
    Shared(Vec<ProjectedMemory>),
    Active { rows: Array2<f64>, script: ActionScript },
    Resample { center: Array2<f64>, scale: Array2<f64> },
}

/// Frame-by-frame decoder with constant-size state.
pub struct DecoderStream<'a> {
    model: &'a MotionVae,
    state: RecurrentState,
    memory: StreamMemory,
    noise: &'a mut dyn Noise,
    t: usize,
}

impl DecoderStream<'_> {
    /// Index of the next frame to be produced.
    pub fn position(&self) -> usize {
        self.t
    }

    pub fn state(&self) -> &RecurrentState {
        &self.state
    }

    pub fn state_bytes(&self) -> usize {
        self.state.byte_size()
    }

    pub fn next_frame(&mut self) -> Array1<f64> {
        let model = self.model;
        let cfg = &model.config.decoder;
        let per_frame = match &self.memory {
            StreamMemory::Shared(_) => None,
            StreamMemory::Active { rows, script } => {
                let j = active_segment(script, self.t);
                Some(model.project_memory(&rows.slice(s![j..j + 1, ..]).to_owned()))
            }
            StreamMemory::Resample { center, scale } => {
                let eps = self.noise.standard_normal(center.nrows(), center.ncols());
                Some(model.project_memory(&(center + &(scale * &eps))))
            }
        };
        let projected = match (&self.memory, &per_frame) {
            (StreamMemory::Shared(p), _) => p,
            (_, Some(p)) => p,
            _ => unreachable!(),
        };
        let mut x = sinusoidal_embedding(self.t, cfg.model_dim, model.config.position_base);
        for ((block, heads), mem) in model.params.decoder_blocks.iter().zip(self.state.layers.iter_mut()).zip(projected) {
            x = block_step(&model.store, block, cfg, heads, x.view(), Some(mem));
        }
        self.t += 1;
        let x = model.params.decoder_norm.apply(&model.store, x.view());
        model.params.output_head.apply(&model.store, x.view())
    }
}
