//! Train a small model on synthetic data, save it, and generate a scripted
//! multi-action sequence from the prior.
//!
//! `cargo run --release --example train_and_generate -- [epochs]`

use motion_vae::model::{load_checkpoint, save_checkpoint, GaussianNoise, ModelConfig, MotionVae};
use motion_vae::motion::{make_synthetic_dataset, SyntheticDatasetConfig};
use motion_vae::training::{train, LossWeights, TrainConfig};

fn main() -> motion_vae::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let data = make_synthetic_dataset(&SyntheticDatasetConfig {
        num_sequences: 64,
        sequence_frames: Some(60),
        max_segment_frames: 60,
        ..Default::default()
    })?;

    let mut model = MotionVae::new(ModelConfig::default(), 0)?;
    let config = TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let weights = LossWeights {
        kl_weight: 1e-2,
        recon_weight: 1.0,
    };
    let report = train(&mut model, &data, &config, &weights, None)?;
    let first = &report.steps[0];
    let last = report.last().expect("at least one step");
    println!("{} steps: recon {:.4} -> {:.4}, kl {:.3} -> {:.3}", report.steps.len(), first.recon, last.recon, first.kl, last.kl);

    let path = std::env::temp_dir().join("motion_vae_example.json");
    save_checkpoint(&model, &path)?;
    let model = load_checkpoint(&path)?;

    let seq = model.generate(&[2, 0, 3], 120, &mut GaussianNoise::new(7))?;
    for seg in seq.script.segments() {
        let mean: f64 = seq.span(seg.start, seg.end).mean().unwrap_or(0.0);
        println!("class {} on frames {}..={}, mean pose value {mean:.3}", seg.label, seg.start, seg.end);
    }

    let latents = model.prior_latents(&[1, 2], &mut GaussianNoise::new(8))?;
    let mut noise = GaussianNoise::new(9);
    let mut stream = model.decoder_stream(&latents, None, &mut noise)?;
    for _ in 0..90 {
        stream.next_frame();
    }
    println!("streamed 90 frames with {} bytes of decoder state", stream.state_bytes());
    Ok(())
}
