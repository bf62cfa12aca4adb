//! Flag frames whose 3D joints disagree with 2D detections, then split the
//! sequence around them.
//!
//! `cargo run --release --example preprocess_filter`

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use motion_vae::motion::{ActionScript, PoseSequence, Skeleton};
use motion_vae::preprocess::{
    flag_bad_frame, project_joints, split_on_mask, Camera, FilterParams, HeadScale, Keypoints2D,
};

fn main() -> motion_vae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let camera = Camera::new(600.0, 600.0, 320.0, 240.0)?;
    let params = FilterParams::default();
    let scale = HeadScale::new(18.0)?;
    let (frames, joints) = (200, 24);

    let mut bad = Vec::with_capacity(frames);
    for t in 0..frames {
        let body: Vec<[f64; 3]> = (0..joints)
            .map(|j| [0.03 * j as f64 - 0.35, 0.05 * (j % 8) as f64 - 0.2, 3.0 + 0.002 * t as f64])
            .collect();
        // A detector glitch between frames 80 and 95 throws most keypoints off.
        let glitch = (80..95).contains(&t);
        let points = project_joints(&body, &camera)?
            .into_iter()
            .map(|[u, v]| {
                let off = if glitch { rng.random_range(30.0..90.0) } else { rng.random_range(-3.0..3.0) };
                [u + off, v - off]
            })
            .collect();
        let keypoints = Keypoints2D {
            points,
            confidence: vec![0.9; joints],
        };
        bad.push(flag_bad_frame(&body, &keypoints, &camera, scale, &params)?.is_bad);
    }
    println!("{} of {frames} frames flagged", bad.iter().filter(|&&b| b).count());

    let script = ActionScript::equal_partition(&[1, 3], frames)?;
    let seq = PoseSequence::new(Array2::zeros((frames, 6)), script, Skeleton { joints: 2, pose_dim: 6, fps: 30.0 })?;
    for (i, piece) in split_on_mask(&seq, &bad, params.min_subsequence_len)?.iter().enumerate() {
        println!("piece {i}: {} frames, labels {:?}", piece.len(), piece.script.labels());
    }
    Ok(())
}
