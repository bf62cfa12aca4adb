use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use motion_vae::metrics::{semantic_consistency, ClassifierConfig, LabelMatch, SequenceClassifier};
use motion_vae::motion::{make_synthetic_dataset, ActionScript, ActionSegment, PoseSequence, SyntheticDatasetConfig};

fn relabel(seq: &PoseSequence, labels: &[usize]) -> PoseSequence {
    let segments: Vec<ActionSegment> = seq
        .script
        .segments()
        .iter()
        .zip(labels)
        .map(|(s, &l)| ActionSegment::new(l, s.start, s.end))
        .collect();
    let mut out = seq.clone();
    out.script = ActionScript::from_raw(segments);
    out
}

#[test]
fn classifier_trained_on_random_labels_is_at_chance() {
    let config = SyntheticDatasetConfig {
        num_sequences: 400,
        seed: 5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data: Vec<PoseSequence> = make_synthetic_dataset(&config)
        .unwrap()
        .iter()
        .map(|seq| {
            let labels: Vec<usize> = (0..seq.script.len()).map(|_| rng.random_range(0..config.num_classes)).collect();
            relabel(seq, &labels)
        })
        .collect();
    let (_, report) = SequenceClassifier::train(&data, config.num_classes, &ClassifierConfig::default()).unwrap();
    let held_out = report.holdout_accuracy.unwrap();
    let chance = 1.0 / config.num_classes as f64;
    assert!((held_out - chance).abs() <= 0.05, "held-out accuracy {held_out} on random labels");
}

#[test]
fn shuffled_label_lists_match_at_collision_rate() {
    let data = make_synthetic_dataset(&SyntheticDatasetConfig {
        num_sequences: 60,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let lists: Vec<Vec<usize>> = data.iter().map(|s| s.script.labels()).collect();

    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    for l in &lists {
        *counts.entry(l.as_slice()).or_default() += 1;
    }
    let n = lists.len() as f64;
    let expected: f64 = counts.values().map(|&c| (c * c) as f64).sum::<f64>() / (n * n);

    // Each generated sequence is a ground-truth sequence carrying another
    // sequence's labels, so its nearest neighbour is itself and it matches only
    // when the borrowed list equals its own.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 40;
    let mut total = 0.0;
    for _ in 0..trials {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<PoseSequence> = data
            .iter()
            .zip(&order)
            .map(|(seq, &j)| {
                let mut out = seq.clone();
                out.script = data[j].script.clone();
                out
            })
            .collect();
        total += semantic_consistency(&shuffled, &data, LabelMatch::Ordered).unwrap();
    }
    let rate = total / trials as f64;
    assert!((rate - expected).abs() < 0.03, "rate {rate}, expected {expected}");
}
