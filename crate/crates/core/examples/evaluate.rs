//! Train the motion classifier and a briefly trained model, then run the
//! benchmark metrics for one and two actions per sequence.
//!
//! `cargo run --release --example evaluate -- [epochs]`

use motion_vae::eval::{evaluate, EvalConfig};
use motion_vae::metrics::{ClassifierConfig, SequenceClassifier};
use motion_vae::model::{ModelConfig, MotionVae};
use motion_vae::motion::{make_synthetic_dataset, SyntheticDatasetConfig};
use motion_vae::training::{train, LossWeights, TrainConfig};

fn main() -> motion_vae::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let data = make_synthetic_dataset(&SyntheticDatasetConfig {
        num_sequences: 80,
        sequence_frames: Some(60),
        max_segment_frames: 60,
        ..Default::default()
    })?;
    let config = ModelConfig::default();

    let (classifier, report) = SequenceClassifier::train(&data, config.num_classes, &ClassifierConfig::default())?;
    println!("classifier: train {:.3}, held out {:?}", report.train_accuracy, report.holdout_accuracy);

    let mut model = MotionVae::new(config, 0)?;
    let train_config = TrainConfig {
        epochs,
        learning_rate: 1e-3,
        ..Default::default()
    };
    train(&mut model, &data, &train_config, &LossWeights { kl_weight: 1e-2, recon_weight: 1.0 }, None)?;

    let eval_config = EvalConfig {
        num_samples: 20,
        actions_per_seq: vec![1, 2],
        repeats: 2,
        ..Default::default()
    };
    for result in evaluate(&model, &classifier, &data, &eval_config)? {
        println!("frames {} actions {}", result.frames, result.actions);
        for m in &result.report.metrics {
            println!("  {:<22} {:>9.4} ± {:.4}", m.metric, m.value, m.stderr.unwrap_or(0.0));
        }
    }
    Ok(())
}
