//! Causal linear attention computed in parallel and as a constant-size recurrence.
//!
//! `cargo run --release --example linear_attention`

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use motion_vae::attention::{attention_parallel, HeadState};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (frames, dim, eps) = (256, 16, 1e-6);
    let mut draw = || Array2::from_shape_fn((frames, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let (q, k, v) = (draw(), draw(), draw());

    let parallel = attention_parallel(q.view(), k.view(), v.view(), eps);

    let mut state = HeadState::zeros(dim);
    let mut worst = 0.0f64;
    for t in 0..frames {
        let out = state.step(q.row(t), k.row(t), v.row(t), eps);
        let gap = (&out - &parallel.row(t)).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(gap);
        if [0, 15, 255].contains(&t) {
            println!("frame {t:>3}: state {} bytes, max gap to parallel {gap:.2e}", state.byte_size());
        }
    }
    println!("max gap over {frames} frames: {worst:.2e}");
}
