//! Draw the synthetic multi-action dataset, summarize it and write it to disk.
//!
//! `cargo run --release --example synthetic_data -- [out_dir]`

use std::collections::BTreeMap;

use motion_vae::motion::{make_synthetic_dataset, read_sequence_dir, write_sequence_dir, SyntheticDatasetConfig};

fn main() -> motion_vae::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/synthetic_data".into());
    let config = SyntheticDatasetConfig {
        num_sequences: 24,
        sequence_frames: Some(60),
        max_segment_frames: 60,
        ..Default::default()
    };
    let data = make_synthetic_dataset(&config)?;

    let mut by_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<usize, usize> = BTreeMap::new();
    for seq in &data {
        *by_count.entry(seq.script.len()).or_default() += 1;
        for seg in seq.script.segments() {
            *by_label.entry(seg.label).or_default() += seg.len();
        }
    }
    println!("{} sequences of {} frames, pose dimension {}", data.len(), data[0].len(), data[0].pose_dim());
    println!("sequences per action count: {by_count:?}");
    println!("frames per class: {by_label:?}");
    let first = &data[0];
    for seg in first.script.segments() {
        println!("  sequence 0: class {} on frames {}..={}", seg.label, seg.start, seg.end);
    }

    write_sequence_dir(&data, &out)?;
    let back = read_sequence_dir(&out)?;
    assert_eq!(back, data);
    println!("wrote and re-read {} files under {out}", back.len());
    Ok(())
}
