//! Causal linear attention and the transformer blocks built on it.
//!
//! With the positive feature map `φ(x) = elu(x) + 1`, causal attention
//!
//! ```text
//! out_t = Σ_{j≤t} (φ(q_t)·φ(k_j)) v_j / (Σ_{j≤t} φ(q_t)·φ(k_j) + ε)
//! ```
//!
//! can be evaluated two ways that agree to rounding error:
//!
//! * in parallel over a whole sequence (a masked `T×T` product), which is
//!   what training differentiates through, and
//! * recurrently, carrying `S = Σ φ(k_j) v_jᵀ` and `n = Σ φ(k_j)` from frame to
//!   frame, which costs the same at every step and never grows.
//!
//! Blocks are pre-normalized residual units: self-attention, an optional
//! softmax cross-attention over a small memory, then a GELU feed-forward layer.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{elu1, gelu, layer_norm_rows, softmax_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Shape of a stack of attention blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    /// Added to the linear-attention normalizer.
    pub eps: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            layers: 2,
            eps: 1e-6,
        }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 || self.layers == 0 {
            return Err(Error::Config("ffn_dim and layers must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("attention eps must be positive".into()));
        }
        Ok(())
    }
}

/// `elu(x) + 1`, element-wise.
pub fn feature_map(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(elu1)
}

/// Causal linear attention over whole `T×d` sequences (quadratic-memory form).
pub fn attention_parallel(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>, eps: f64) -> Array2<f64> {
    let fq = q.mapv(elu1);
    let fk = k.mapv(elu1);
    let mut weights = fq.dot(&fk.t());
    for (r, mut row) in weights.rows_mut().into_iter().enumerate() {
        row.slice_mut(s![r + 1..]).fill(0.0);
    }
    let den = weights.sum_axis(Axis(1)) + eps;
    let mut out = weights.dot(&v);
    for (mut row, d) in out.rows_mut().into_iter().zip(den.iter()) {
        row /= *d;
    }
    out
}

/// Running linear-attention summary for one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadState {
    pub s: Array2<f64>,
    pub n: Array1<f64>,
}

impl HeadState {
    pub fn zeros(head_dim: usize) -> Self {
        Self {
            s: Array2::zeros((head_dim, head_dim)),
            n: Array1::zeros(head_dim),
        }
    }

    /// Folds one token into the state and returns its attention output.
    pub fn step(&mut self, q: ArrayView1<f64>, k: ArrayView1<f64>, v: ArrayView1<f64>, eps: f64) -> Array1<f64> {
        let fk = feature_map(k);
        for (i, &fki) in fk.iter().enumerate() {
            self.s.row_mut(i).scaled_add(fki, &v);
        }
        self.n += &fk;
        let fq = feature_map(q);
        let num = fq.dot(&self.s);
        let den = fq.dot(&self.n) + eps;
        num / den
    }

    pub fn byte_size(&self) -> usize {
        (self.s.len() + self.n.len()) * std::mem::size_of::<f64>()
    }
}

/// Per-layer, per-head recurrent state of a block stack.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub layers: Vec<Vec<HeadState>>,
}

impl RecurrentState {
    pub fn new(config: &AttentionConfig) -> Self {
        Self {
            layers: (0..config.layers)
                .map(|_| (0..config.heads).map(|_| HeadState::zeros(config.head_dim())).collect())
                .collect(),
        }
    }

    pub fn byte_size(&self) -> usize {
        self.layers.iter().flatten().map(HeadState::byte_size).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|h| h.s.iter().chain(h.n.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{prefix}.gain"), 1, dim),
            bias: store.add_zeros(format!("{prefix}.bias"), 1, dim),
        }
    }

    pub fn apply(&self, store: &ParamStore, x: ArrayView1<f64>) -> Array1<f64> {
        let x2 = x.to_owned().insert_axis(Axis(0));
        let (y, _, _) = layer_norm_rows(&x2, store.get(self.gain), store.get(self.bias));
        y.index_axis_move(Axis(0), 0)
    }

    pub fn graph(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Affine map `x W + b` with `W` stored `in×out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add_glorot(format!("{prefix}.weight"), input, output, rng),
            bias: bias.then(|| store.add_zeros(format!("{prefix}.bias"), 1, output)),
        }
    }

    pub fn apply(&self, store: &ParamStore, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = x.dot(store.get(self.weight));
        if let Some(b) = self.bias {
            y += &store.get(b).row(0);
        }
        y
    }

    pub fn apply_rows(&self, store: &ParamStore, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(store.get(self.weight));
        if let Some(b) = self.bias {
            y += &store.get(b).row(0);
        }
        y
    }

    pub fn graph(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossAttentionParams {
    pub norm: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Parameters of one pre-norm block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockParams {
    pub attn_norm: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub cross: Option<CrossAttentionParams>,
    pub ffn_norm: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl BlockParams {
    /// Registers a block; `memory_dim` adds cross-attention over rows of that width.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &AttentionConfig,
        memory_dim: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let d = config.model_dim;
        let attn_norm = LayerNormParams::new(store, &format!("{prefix}.attn_norm"), d);
        let query = Linear::new(store, &format!("{prefix}.attn.query"), d, d, false, rng);
        let key = Linear::new(store, &format!("{prefix}.attn.key"), d, d, false, rng);
        let value = Linear::new(store, &format!("{prefix}.attn.value"), d, d, false, rng);
        let output = Linear::new(store, &format!("{prefix}.attn.output"), d, d, true, rng);
        let cross = memory_dim.map(|m| CrossAttentionParams {
            norm: LayerNormParams::new(store, &format!("{prefix}.cross_norm"), d),
            query: Linear::new(store, &format!("{prefix}.cross.query"), d, d, false, rng),
            key: Linear::new(store, &format!("{prefix}.cross.key"), m, d, false, rng),
            value: Linear::new(store, &format!("{prefix}.cross.value"), m, d, false, rng),
            output: Linear::new(store, &format!("{prefix}.cross.output"), d, d, true, rng),
        });
        let ffn_norm = LayerNormParams::new(store, &format!("{prefix}.ffn_norm"), d);
        let ffn_in = Linear::new(store, &format!("{prefix}.ffn.in"), d, config.ffn_dim, true, rng);
        let ffn_out = Linear::new(store, &format!("{prefix}.ffn.out"), config.ffn_dim, d, true, rng);
        Self {
            attn_norm,
            query,
            key,
            value,
            output,
            cross,
            ffn_norm,
            ffn_in,
            ffn_out,
        }
    }
}

/// Cross-attention keys and values for one block, `m×d_m` each.
#[derive(Clone, Debug)]
pub struct ProjectedMemory {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl ProjectedMemory {
    pub fn new(store: &ParamStore, cross: &CrossAttentionParams, memory: ArrayView2<f64>) -> Self {
        Self {
            keys: cross.key.apply_rows(store, memory),
            values: cross.value.apply_rows(store, memory),
        }
    }
}

fn cross_attend(store: &ParamStore, cross: &CrossAttentionParams, config: &AttentionConfig, x: ArrayView1<f64>, mem: &ProjectedMemory) -> Array1<f64> {
    let h = cross.norm.apply(store, x);
    let q = cross.query.apply(store, h.view());
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array1::zeros(config.model_dim);
    for head in 0..config.heads {
        let cols = s![head * dh..(head + 1) * dh];
        let qh = q.slice(cols);
        let kh = mem.keys.slice(s![.., head * dh..(head + 1) * dh]);
        let vh = mem.values.slice(s![.., head * dh..(head + 1) * dh]);
        let scores = (kh.dot(&qh) * scale).insert_axis(Axis(0));
        let w = softmax_rows(&scores);
        out.slice_mut(cols).assign(&w.row(0).dot(&vh));
    }
    cross.output.apply(store, out.view())
}

/// Advances one block by a single token.
pub fn block_step(
    store: &ParamStore,
    params: &BlockParams,
    config: &AttentionConfig,
    state: &mut [HeadState],
    x: ArrayView1<f64>,
    memory: Option<&ProjectedMemory>,
) -> Array1<f64> {
    let dh = config.head_dim();
    let h = params.attn_norm.apply(store, x);
    let q = params.query.apply(store, h.view());
    let k = params.key.apply(store, h.view());
    let v = params.value.apply(store, h.view());
    let mut attn = Array1::zeros(config.model_dim);
    for (head, st) in state.iter_mut().enumerate() {
        let cols = s![head * dh..(head + 1) * dh];
        let out = st.step(q.slice(cols), k.slice(cols), v.slice(cols), config.eps);
        attn.slice_mut(cols).assign(&out);
    }
    let mut y = x.to_owned() + params.output.apply(store, attn.view());
    if let (Some(cross), Some(mem)) = (&params.cross, memory) {
        y += &cross_attend(store, cross, config, y.view(), mem);
    }
    let h = params.ffn_norm.apply(store, y.view());
    let hidden = params.ffn_in.apply(store, h.view()).mapv(gelu);
    y + params.ffn_out.apply(store, hidden.view())
}

/// Cross-attention memory as seen by the differentiable path.
#[derive(Clone, Copy, Debug)]
pub enum MemoryVar {
    /// `k×d` rows shared by every frame.
    Shared(Var),
    /// `(T·m)×d` rows; frame `t` attends to rows `t·m .. t·m+m`.
    PerFrame(Var, usize),
}

/// Differentiable causal linear attention for one head.
pub fn linear_attention_graph(g: &mut Graph, q: Var, k: Var, v: Var, eps: f64) -> Var {
    let fq = g.elu1(q);
    let fk = g.elu1(k);
    let scores = g.matmul_nt(fq, fk);
    let masked = g.causal_mask(scores);
    let num = g.matmul(masked, v);
    let den = g.row_sum(masked);
    let den = g.add_scalar(den, eps);
    g.div_col(num, den)
}

fn split_heads_apply(g: &mut Graph, config: &AttentionConfig, q: Var, mut per_head: impl FnMut(&mut Graph, usize, Var) -> Var) -> Var {
    let dh = config.head_dim();
    let outs: Vec<Var> = (0..config.heads)
        .map(|head| {
            let qh = g.slice_cols(q, head * dh, dh);
            per_head(g, head, qh)
        })
        .collect();
    if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

/// Applies one block to a whole `T×d_m` sequence at once.
pub fn block_parallel(g: &mut Graph, params: &BlockParams, config: &AttentionConfig, x: Var, memory: Option<MemoryVar>) -> Var {
    let dh = config.head_dim();
    let h = params.attn_norm.graph(g, x);
    let q = params.query.graph(g, h);
    let k = params.key.graph(g, h);
    let v = params.value.graph(g, h);
    let attn = split_heads_apply(g, config, q, |g, head, qh| {
        let kh = g.slice_cols(k, head * dh, dh);
        let vh = g.slice_cols(v, head * dh, dh);
        linear_attention_graph(g, qh, kh, vh, config.eps)
    });
    let attn = params.output.graph(g, attn);
    let mut y = g.add(x, attn);

    if let (Some(cross), Some(mem)) = (&params.cross, memory) {
        let scale = 1.0 / (dh as f64).sqrt();
        let hc = cross.norm.graph(g, y);
        let qc = cross.query.graph(g, hc);
        let (mem_rows, per_frame) = match mem {
            MemoryVar::Shared(m) => (m, None),
            MemoryVar::PerFrame(m, slots) => (m, Some(slots)),
        };
        let kc = cross.key.graph(g, mem_rows);
        let vc = cross.value.graph(g, mem_rows);
        let out = split_heads_apply(g, config, qc, |g, head, qh| {
            let kh = g.slice_cols(kc, head * dh, dh);
            let vh = g.slice_cols(vc, head * dh, dh);
            match per_frame {
                None => {
                    let sc = g.matmul_nt(qh, kh);
                    let sc = g.scale(sc, scale);
                    let w = g.softmax_rows(sc);
                    g.matmul(w, vh)
                }
                Some(slots) => {
                    let sc = g.block_dot(qh, kh, slots);
                    let sc = g.scale(sc, scale);
                    let w = g.softmax_rows(sc);
                    g.block_mix(w, vh, slots)
                }
            }
        });
        let out = cross.output.graph(g, out);
        y = g.add(y, out);
    }

    let hf = params.ffn_norm.graph(g, y);
    let hidden = params.ffn_in.graph(g, hf);
    let hidden = g.gelu(hidden);
    let out = params.ffn_out.graph(g, hidden);
    g.add(y, out)
}

/// Sinusoidal embedding of an unbounded integer position.
pub fn sinusoidal_embedding(position: usize, dim: usize, base: f64) -> Array1<f64> {
    let mut out = Array1::zeros(dim);
    let p = position as f64;
    for i in 0..dim / 2 {
        let freq = base.powf(-((2 * i) as f64) / dim as f64);
        out[2 * i] = (p * freq).sin();
        out[2 * i + 1] = (p * freq).cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = (p * base.powf(-((dim - 1) as f64) / dim as f64)).sin();
    }
    out
}

/// Rows `start..start+len` of the sinusoidal table.
pub fn sinusoidal_table(start: usize, len: usize, dim: usize, base: f64) -> Array2<f64> {
    let mut out = Array2::zeros((len, dim));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&sinusoidal_embedding(start + i, dim, base));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
    }

    /// Direct double loop over the causal formula.
    fn naive(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, eps: f64) -> Array2<f64> {
        let phi = |x: f64| if x > 0.0 { x + 1.0 } else { x.exp() };
        let (t, d) = (q.nrows(), v.ncols());
        let mut out = Array2::zeros((t, d));
        for i in 0..t {
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for j in 0..=i {
                let w: f64 = (0..q.ncols()).map(|c| phi(q[[i, c]]) * phi(k[[j, c]])).sum();
                for c in 0..d {
                    num[c] += w * v[[j, c]];
                }
                den += w;
            }
            for c in 0..d {
                out[[i, c]] = num[c] / (den + eps);
            }
        }
        out
    }

    #[test]
    fn feature_map_values() {
        let x = ndarray::array![0.0, 2.0, -20.0];
        let y = feature_map(x.view());
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 3.0);
        assert!(y[2] > 0.0 && y[2] <= 1e-8);
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random(&mut rng, 1, 8), random(&mut rng, 1, 8), random(&mut rng, 1, 8));
        let out = attention_parallel(q.view(), k.view(), v.view(), 1e-6);
        for (a, b) in out.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
        let mut st = HeadState::zeros(8);
        let step = st.step(q.row(0), k.row(0), v.row(0), 1e-6);
        for (a, b) in step.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constant_values_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k) = (random(&mut rng, 12, 4), random(&mut rng, 12, 4));
        let v = Array2::from_shape_fn((12, 3), |(_, c)| [0.5, -2.0, 7.0][c]);
        let out = attention_parallel(q.view(), k.view(), v.view(), 1e-9);
        for row in out.rows() {
            assert!((row[0] - 0.5).abs() < 1e-6 && (row[1] + 2.0).abs() < 1e-6 && (row[2] - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn parallel_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (random(&mut rng, 16, 8), random(&mut rng, 16, 8), random(&mut rng, 16, 8));
        let fast = attention_parallel(q.view(), k.view(), v.view(), 1e-6);
        let slow = naive(&q, &k, &v, 1e-6);
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn recurrent_steps_match_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, k, v) = (random(&mut rng, 64, 8), random(&mut rng, 64, 8), random(&mut rng, 64, 8));
        let par = attention_parallel(q.view(), k.view(), v.view(), 1e-6);
        let mut st = HeadState::zeros(8);
        for t in 0..64 {
            let out = st.step(q.row(t), k.row(t), v.row(t), 1e-6);
            for (a, b) in out.iter().zip(par.row(t).iter()) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn state_size_does_not_grow() {
        let config = AttentionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut st = HeadState::zeros(config.head_dim());
        let size0 = st.byte_size();
        for _ in 0..10_000 {
            let x = random(&mut rng, 3, config.head_dim());
            st.step(x.row(0), x.row(1), x.row(2), config.eps);
        }
        assert_eq!(st.byte_size(), size0);
        assert_eq!(RecurrentState::new(&config).byte_size(), 2 * 4 * (16 * 16 + 16) * 8);
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::default().validate().is_ok());
        assert!(AttentionConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(AttentionConfig { eps: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sinusoid_is_bounded_and_unique() {
        let a = sinusoidal_embedding(3, 16, 10_000.0);
        let b = sinusoidal_embedding(4, 16, 10_000.0);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
        assert_eq!(sinusoidal_table(3, 2, 16, 10_000.0).row(0), a);
    }

    fn block_fixture(seed: u64, memory_dim: Option<usize>) -> (ParamStore, BlockParams, AttentionConfig) {
        let config = AttentionConfig { model_dim: 16, heads: 2, ffn_dim: 24, layers: 1, eps: 1e-6 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = BlockParams::new(&mut store, "b", &config, memory_dim, &mut rng);
        // Non-trivial norm parameters so the check covers them too.
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with("bias") || store.name(id).ends_with("gain") {
                let r = random(&mut rng, 1, store.get(id).ncols()) * 0.3;
                *store.get_mut(id) += &r;
            }
        }
        (store, block, config)
    }

    fn run_steps(store: &ParamStore, block: &BlockParams, config: &AttentionConfig, x: &Array2<f64>, memory: Option<&Array2<f64>>) -> Array2<f64> {
        let mut state: Vec<HeadState> = (0..config.heads).map(|_| HeadState::zeros(config.head_dim())).collect();
        let projected = memory.map(|m| ProjectedMemory::new(store, block.cross.as_ref().unwrap(), m.view()));
        let mut out = Array2::zeros(x.raw_dim());
        for t in 0..x.nrows() {
            let y = block_step(store, block, config, &mut state, x.row(t), projected.as_ref());
            out.row_mut(t).assign(&y);
        }
        out
    }

    #[test]
    fn block_step_matches_parallel_block() {
        for (seed, mem) in [(10, None), (11, Some(3usize))] {
            let (store, block, config) = block_fixture(seed, mem.map(|_| 8));
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = random(&mut rng, 32, 16);
            let memory = mem.map(|m| random(&mut rng, m, 8));
            let stepped = run_steps(&store, &block, &config, &x, memory.as_ref());
            let mut g = Graph::new(&store);
            let xv = g.constant(x.clone());
            let mv = memory.as_ref().map(|m| MemoryVar::Shared(g.constant(m.clone())));
            let y = block_parallel(&mut g, &block, &config, xv, mv);
            let diff = (g.value(y) - &stepped).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff <= 1e-5, "max diff {diff}");
        }
    }

    #[test]
    fn per_frame_memory_with_repeated_rows_matches_shared_memory() {
        let (store, block, config) = block_fixture(12, Some(8));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&mut rng, 10, 16);
        let memory = random(&mut rng, 3, 8);
        let mut g = Graph::new(&store);
        let xv = g.constant(x);
        let mv = g.constant(memory);
        let shared = block_parallel(&mut g, &block, &config, xv, Some(MemoryVar::Shared(mv)));
        let tiled = g.repeat_rows(mv, 10);
        let per_frame = block_parallel(&mut g, &block, &config, xv, Some(MemoryVar::PerFrame(tiled, 3)));
        let diff = (g.value(shared) - g.value(per_frame)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-12);
    }

    #[test]
    fn later_inputs_do_not_affect_earlier_outputs() {
        let (store, block, config) = block_fixture(14, None);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random(&mut rng, 20, 16);
        let mut x2 = x.clone();
        x2.slice_mut(s![12.., ..]).assign(&random(&mut rng, 8, 16));
        let a = run_steps(&store, &block, &config, &x, None);
        let b = run_steps(&store, &block, &config, &x2, None);
        assert_eq!(a.slice(s![..12, ..]), b.slice(s![..12, ..]));
        assert_ne!(a.slice(s![12.., ..]), b.slice(s![12.., ..]));
        let mut g = Graph::new(&store);
        let (xa, xb) = (g.constant(x), g.constant(x2));
        let ya = block_parallel(&mut g, &block, &config, xa, None);
        let yb = block_parallel(&mut g, &block, &config, xb, None);
        assert_eq!(g.value(ya).slice(s![..12, ..]), g.value(yb).slice(s![..12, ..]));
    }

    #[test]
    fn block_step_is_deterministic() {
        let (store, block, config) = block_fixture(16, None);
        let x = Array2::from_shape_fn((4, 16), |(t, c)| (t as f64 - c as f64) * 0.1);
        assert_eq!(run_steps(&store, &block, &config, &x, None), run_steps(&store, &block, &config, &x, None));
    }
}
