use super::*;
use crate::attention::AttentionConfig;
use crate::model::{ConstNoise, ModelConfig, Variant};
use crate::motion::{make_synthetic_dataset, ActionScript, ActionSegment, Skeleton, SyntheticDatasetConfig};
use proptest::prelude::*;

fn tiny_config(variant: Variant) -> ModelConfig {
    let att = AttentionConfig {
        model_dim: 8,
        heads: 2,
        ffn_dim: 12,
        layers: 1,
        eps: 1e-6,
    };
    ModelConfig {
        num_classes: 3,
        skeleton: Skeleton {
            joints: 1,
            pose_dim: 4,
            fps: 30.0,
        },
        latent_dim: 4,
        action_embed_dim: 3,
        encoder: att,
        decoder: att,
        variant,
        position_base: 10_000.0,
    }
}

fn tiny_data(n: usize, seed: u64) -> Vec<PoseSequence> {
    make_synthetic_dataset(&SyntheticDatasetConfig {
        num_classes: 3,
        joints: 1,
        pose_dim: 4,
        min_segment_frames: 4,
        max_segment_frames: 6,
        max_actions: 2,
        num_sequences: n,
        crossfade_frames: 1,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn kl_closed_forms() {
    let z = ndarray::Array1::zeros(5);
    assert_eq!(kl_divergence(z.view(), z.view()), 0.0);
    let one = ndarray::array![1.0];
    let zero = ndarray::array![0.0];
    assert!((kl_divergence(one.view(), zero.view()) - 0.5).abs() <= 1e-12);
    let expected = (std::f64::consts::E - 2.0) / 2.0;
    assert!((kl_divergence(zero.view(), one.view()) - expected).abs() <= 1e-12);
    assert!((expected - 0.35914).abs() < 1e-5);
}

proptest! {
    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12)) {
        let mu: ndarray::Array1<f64> = pairs.iter().map(|p| p.0).collect();
        let lv: ndarray::Array1<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assert!(kl_divergence(mu.view(), lv.view()) >= 0.0);
    }
}

#[test]
fn reconstruction_loss_examples() {
    let a = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 1.0);
    assert_eq!(reconstruction_loss(a.view(), a.view()).unwrap(), 0.0);
    let b = &a + 1.0;
    assert!((reconstruction_loss(b.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(
        reconstruction_loss(a.view(), a.t()),
        Err(Error::Input(_))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = Array2::from_shape_fn((7, 4), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
    let q = Array2::from_shape_fn((7, 4), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
    let mut naive = 0.0;
    for i in 0..7 {
        for j in 0..4 {
            let d: f64 = p[[i, j]] - q[[i, j]];
            naive += d * d;
        }
    }
    naive /= 28.0;
    assert!((reconstruction_loss(p.view(), q.view()).unwrap() - naive).abs() <= 1e-12);
}

#[test]
fn batch_losses_match_the_streaming_model() {
    let model = MotionVae::new(tiny_config(Variant::Full), 1).unwrap();
    let data = tiny_data(3, 1);
    let weights = LossWeights {
        kl_weight: 0.3,
        recon_weight: 1.0,
    };
    let batch: Vec<&PoseSequence> = data.iter().collect();
    let (stats, _) = batch_gradients(&model, &batch, &weights, &mut GaussianNoise::new(9), false).unwrap();

    let mut noise = GaussianNoise::new(9);
    let (mut recon, mut kl, mut posteriors) = (0.0, 0.0, 0);
    for seq in &data {
        let pred = model.reconstruct(seq, &mut noise).unwrap();
        recon += reconstruction_loss(pred.view(), seq.frames.view()).unwrap();
        for d in model.encode_sequence(seq).unwrap() {
            kl += kl_divergence(d.mu.view(), d.logvar.view());
            posteriors += 1;
        }
    }
    assert!((stats.recon - recon / 3.0).abs() <= 1e-9);
    assert!((stats.kl - kl / posteriors as f64).abs() <= 1e-9);
    assert!((stats.total - (stats.recon + 0.3 * stats.kl)).abs() <= 1e-12);
}

#[test]
fn quadratic_stub_gradients_are_exact() {
    let mut store = ParamStore::new();
    let id = store.add("x", Array2::from_shape_fn((20, 15), |(i, j)| (i as f64 - j as f64) * 0.1));
    let coef = Array2::from_shape_fn((20, 15), |(i, j)| 1.0 + ((i * 15 + j) % 7) as f64);
    let analytic = vec![store.get(id) * &coef * 2.0];
    let report = check_gradient(
        &mut store,
        |s| s,
        &analytic,
        |s| Ok((s.get(id).mapv(|v| v * v) * &coef).sum()),
        1e-3,
        200,
        3,
    )
    .unwrap();
    assert_eq!(report.coordinates, 200);
    assert!(report.max_rel_error <= 1e-9, "{report:?}");
}

#[test]
fn analytic_gradients_match_finite_differences_for_every_variant() {
    let data = tiny_data(2, 5);
    let batch: Vec<&PoseSequence> = data.iter().collect();
    let weights = LossWeights {
        kl_weight: 0.1,
        recon_weight: 1.0,
    };
    for variant in Variant::ABLATIONS.into_iter().map(|v| match v {
        Variant::BaselineSplit(_) => Variant::BaselineSplit(2),
        v => v,
    }) {
        let mut model = MotionVae::new(tiny_config(variant), 2).unwrap();
        let report = gradcheck(&mut model, &batch, &weights, 1e-5, 200, 7).unwrap();
        assert!(report.max_rel_error <= 1e-3, "{variant}: {report:?}");
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = tiny_data(6, 2);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        seed: 4,
        ..Default::default()
    };
    let run = || {
        let mut model = MotionVae::new(tiny_config(Variant::Full), 3).unwrap();
        train(&mut model, &data, &config, &LossWeights::default(), None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.steps.len(), 6);
    assert_eq!(a.steps, b.steps);
}

#[test]
fn balancing_changes_only_which_sequences_are_drawn() {
    let one = tiny_data(1, 3).remove(0);
    let data = vec![one.clone(), one.clone(), one.clone(), one];
    let run = |balanced| {
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            balanced,
            ..Default::default()
        };
        let mut model = MotionVae::new(tiny_config(Variant::Full), 3).unwrap();
        train(&mut model, &data, &config, &LossWeights::default(), None).unwrap()
    };
    assert_eq!(run(false).steps, run(true).steps);
}

#[test]
fn training_log_has_one_row_per_step() {
    let data = tiny_data(4, 2);
    let mut model = MotionVae::new(tiny_config(Variant::Full), 3).unwrap();
    let mut buf = Vec::new();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..Default::default()
    };
    train(&mut model, &data, &config, &LossWeights::default(), Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,recon,kl,total,wall_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[2].split(',').count(), 5);
}

#[test]
fn non_finite_loss_is_reported_with_the_step() {
    let data = tiny_data(1, 2);
    let mut model = MotionVae::new(tiny_config(Variant::Full), 3).unwrap();
    let head = model.params().output_head.weight;
    model.store_mut().get_mut(head)[[0, 0]] = f64::NAN;
    let mut opt = Adam::new(model.store(), 1e-3);
    let batch = vec![&data[0]];
    match train_step(&mut model, &batch, &LossWeights::default(), &mut opt, 1.0, &mut ConstNoise(0.0)) {
        Err(Error::Training { step, detail }) => {
            assert_eq!(step, 1);
            assert!(detail.contains("non-finite"));
        }
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn overfitting_one_sequence_cuts_reconstruction_error() {
    let config = ModelConfig {
        num_classes: 4,
        ..ModelConfig::default()
    };
    let frames = Array2::from_shape_fn((40, 27), |(t, j)| {
        let c = if t < 20 { 0.3 } else { -0.5 };
        c + 0.4 * ((t as f64) * 0.3 + j as f64).sin()
    });
    let seq = PoseSequence::new(
        frames,
        ActionScript::new(vec![ActionSegment::new(0, 0, 19), ActionSegment::new(2, 20, 39)]).unwrap(),
        config.skeleton,
    )
    .unwrap();
    let mut model = MotionVae::new(config, 1).unwrap();
    let mut opt = Adam::new(model.store(), 1e-3);
    let mut first = None;
    let mut last = 0.0;
    for step in 0..200 {
        let stats = train_step(
            &mut model,
            &[&seq],
            &LossWeights::default(),
            &mut opt,
            1.0,
            &mut GaussianNoise::new(step),
        )
        .unwrap();
        first.get_or_insert(stats.recon);
        last = stats.recon;
    }
    let first = first.unwrap();
    assert!(last <= 0.1 * first, "recon {first} -> {last}");
}

fn fit(kl_weight: f64, recon_weight: f64, steps: usize, lr: f64) -> (f64, f64) {
    let data = tiny_data(4, 8);
    let mut model = MotionVae::new(tiny_config(Variant::Full), 5).unwrap();
    let mut opt = Adam::new(model.store(), lr);
    let batch: Vec<&PoseSequence> = data.iter().collect();
    let weights = LossWeights {
        kl_weight,
        recon_weight,
    };
    for step in 0..steps {
        train_step(&mut model, &batch, &weights, &mut opt, 1.0, &mut GaussianNoise::new(step as u64)).unwrap();
    }
    posterior_magnitudes(&model, &data).unwrap()
}

#[test]
fn kl_weight_shrinks_posterior_means() {
    let (free, _) = fit(0.0, 1.0, 150, 3e-3);
    let (tight, _) = fit(10.0, 1.0, 150, 3e-3);
    assert!(free > tight, "|mu| {free} vs {tight}");
}

#[test]
fn dominant_kl_collapses_posteriors_to_the_prior() {
    let (mu, logvar) = fit(1e6, 1.0, 1500, 1e-3);
    assert!(mu < 1e-2 && logvar < 1e-2, "|mu| {mu}, |logvar| {logvar}");
}
