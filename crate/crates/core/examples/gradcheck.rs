//! Finite-difference check of the training-loss gradient for every model variant.
//!
//! `cargo run --release --example gradcheck`

use motion_vae::model::{ModelConfig, MotionVae, Variant};
use motion_vae::motion::{make_synthetic_dataset, SyntheticDatasetConfig};
use motion_vae::training::{gradcheck, LossWeights};

fn main() -> motion_vae::Result<()> {
    let data = make_synthetic_dataset(&SyntheticDatasetConfig {
        num_sequences: 2,
        ..Default::default()
    })?;
    let batch: Vec<_> = data.iter().collect();
    for variant in Variant::ABLATIONS {
        let mut model = MotionVae::new(
            ModelConfig {
                variant,
                ..Default::default()
            },
            0,
        )?;
        let report = gradcheck(&mut model, &batch, &LossWeights::default(), 1e-5, 20, 7)?;
        println!(
            "{variant:<16} max relative error {:.2e} (worst {}[{}, {}])",
            report.max_rel_error, report.worst.0, report.worst.1, report.worst.2
        );
    }
    Ok(())
}
