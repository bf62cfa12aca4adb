//! Pose-quality filtering against 2D keypoints, sequence splitting and
//! class-balanced sampling weights.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{ActionScript, ActionSegment, PoseSequence};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Config("camera focal lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Detected 2D keypoints for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub points: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

impl Keypoints2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Thresholds of the reprojection filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Deviation threshold in head-scale units.
    pub tau: f64,
    /// A frame is bad when more than this many joints deviate.
    pub max_bad_joints: usize,
    pub min_confidence: f64,
    pub min_subsequence_len: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            max_bad_joints: 10,
            min_confidence: 0.3,
            min_subsequence_len: 30,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config("min_confidence must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Pixel length the deviation is measured in, proportional to the head size.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct HeadScale(f64);

impl HeadScale {
    pub fn new(pixels: f64) -> Result<Self> {
        if pixels > 0.0 && pixels.is_finite() {
            Ok(Self(pixels))
        } else {
            Err(Error::Input(format!("head scale must be positive, got {pixels}")))
        }
    }

    /// Distance between the head and neck keypoints.
    pub fn from_keypoints(kp: &Keypoints2D, head: usize, neck: usize) -> Result<Self> {
        let (Some(h), Some(n)) = (kp.points.get(head), kp.points.get(neck)) else {
            return Err(Error::Input(format!(
                "head/neck keypoints {head}/{neck} missing from a {}-point frame",
                kp.len()
            )));
        };
        Self::new(((h[0] - n[0]).powi(2) + (h[1] - n[1]).powi(2)).sqrt())
    }

    pub fn pixels(self) -> f64 {
        self.0
    }
}

/// Projects camera-frame joints (meters) to pixels.
pub fn project_joints(joints3d: &[[f64; 3]], camera: &Camera) -> Result<Vec<[f64; 2]>> {
    joints3d
        .iter()
        .enumerate()
        .map(|(i, &[x, y, z])| {
            if z > 0.0 {
                Ok([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
            } else {
                Err(Error::Projection { joint: i, z })
            }
        })
        .collect()
}

/// Result of checking one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameCheck {
    pub is_bad: bool,
    pub deviant_joints: Vec<usize>,
}

/// Flags a frame whose projected joints disagree with confident 2D detections.
pub fn flag_bad_frame(
    joints3d: &[[f64; 3]],
    keypoints: &Keypoints2D,
    camera: &Camera,
    head_scale: HeadScale,
    params: &FilterParams,
) -> Result<FrameCheck> {
    if joints3d.len() != keypoints.points.len() || keypoints.points.len() != keypoints.confidence.len() {
        return Err(Error::Input(format!(
            "joint count mismatch: {} 3D joints, {} keypoints, {} confidences",
            joints3d.len(),
            keypoints.points.len(),
            keypoints.confidence.len()
        )));
    }
    let projected = project_joints(joints3d, camera)?;
    let s = head_scale.pixels();
    let deviant_joints: Vec<usize> = projected
        .iter()
        .zip(&keypoints.points)
        .zip(&keypoints.confidence)
        .enumerate()
        .filter(|(_, ((p, k), &c))| {
            let dist = ((p[0] - k[0]).powi(2) + (p[1] - k[1]).powi(2)).sqrt();
            c >= params.min_confidence && dist / s > params.tau
        })
        .map(|(i, _)| i)
        .collect();
    Ok(FrameCheck {
        is_bad: deviant_joints.len() > params.max_bad_joints,
        deviant_joints,
    })
}

/// Maximal runs of `false` (good) entries as inclusive `(start, end)` pairs.
pub fn good_runs(bad: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &b) in bad.iter().enumerate() {
        match (b, start) {
            (false, None) => start = Some(t),
            (true, Some(s)) => {
                runs.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, bad.len() - 1));
    }
    runs
}

/// Cuts `seq` around bad frames and re-indexes its segments into each piece.
///
/// Runs shorter than `min_len` are discarded, as are runs no segment overlaps.
pub fn split_on_mask(seq: &PoseSequence, bad: &[bool], min_len: usize) -> Result<Vec<PoseSequence>> {
    if bad.len() != seq.len() {
        return Err(Error::Input(format!(
            "mask has {} entries for a {}-frame sequence",
            bad.len(),
            seq.len()
        )));
    }
    let mut out = Vec::new();
    for (a, b) in good_runs(bad) {
        if b + 1 - a < min_len {
            continue;
        }
        let segments: Vec<ActionSegment> = seq
            .script
            .segments()
            .iter()
            .filter_map(|s| {
                let start = s.start.max(a);
                let end = s.end.min(b);
                (start <= end).then(|| ActionSegment::new(s.label, start - a, end - a))
            })
            .collect();
        if segments.is_empty() {
            log::warn!("dropping frames {a}..={b}: no action segment overlaps them");
            continue;
        }
        out.push(PoseSequence {
            frames: seq.span(a, b).to_owned(),
            script: ActionScript::from_raw(segments),
            skeleton: seq.skeleton,
        });
    }
    Ok(out)
}

/// Per-sequence sampling probabilities inversely proportional to how often its labels occur.
pub fn balanced_weights(dataset: &[PoseSequence]) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot weight an empty dataset".into()));
    }
    let max_label = dataset
        .iter()
        .flat_map(|s| s.script.segments().iter().map(|g| g.label))
        .max()
        .unwrap_or(0);
    let mut counts = vec![0usize; max_label + 1];
    for seq in dataset {
        for seg in seq.script.segments() {
            counts[seg.label] += 1;
        }
    }
    let raw: Vec<f64> = dataset
        .iter()
        .map(|seq| {
            let segs = seq.script.segments();
            if segs.is_empty() {
                return Err(Error::Input("sequence without action segments".into()));
            }
            let mean = segs.iter().map(|g| counts[g.label] as f64).sum::<f64>() / segs.len() as f64;
            Ok(1.0 / mean)
        })
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Draws sequence indices according to fixed weights.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        WeightedIndex::new(weights)
            .map(|dist| Self { dist })
            .map_err(|e| Error::Input(format!("invalid sampling weights: {e}")))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }
}

/// Keypoint file contents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeypointFile {
    pub frames: Vec<Keypoints2D>,
}

/// Per-frame 3D joint positions in camera coordinates (meters).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointsFile {
    pub frames: Vec<Vec<[f64; 3]>>,
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let cam: Camera = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    cam.validate()?;
    Ok(cam)
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn read_joints(path: impl AsRef<Path>) -> Result<JointsFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Where a head scale comes from when filtering a whole sequence.
#[derive(Clone, Copy, Debug)]
pub enum HeadScaleSource {
    Fixed(HeadScale),
    Keypoints { head: usize, neck: usize },
}

/// Flags every frame of a sequence; returns the bad-frame mask and per-frame checks.
pub fn flag_sequence(
    joints: &JointsFile,
    keypoints: &KeypointFile,
    camera: &Camera,
    scale: HeadScaleSource,
    params: &FilterParams,
) -> Result<Vec<FrameCheck>> {
    params.validate()?;
    if joints.frames.len() != keypoints.frames.len() {
        return Err(Error::Input(format!(
            "{} joint frames but {} keypoint frames",
            joints.frames.len(),
            keypoints.frames.len()
        )));
    }
    joints
        .frames
        .iter()
        .zip(&keypoints.frames)
        .map(|(j, k)| {
            let s = match scale {
                HeadScaleSource::Fixed(s) => s,
                HeadScaleSource::Keypoints { head, neck } => HeadScale::from_keypoints(k, head, neck)?,
            };
            flag_bad_frame(j, k, camera, s, params)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Skeleton;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_the_principal_point() {
        assert_eq!(project_joints(&[[0.0, 0.0, 2.0]], &cam()).unwrap(), vec![[320.0, 240.0]]);
        assert_eq!(project_joints(&[[2.0, 0.0, 2.0]], &cam()).unwrap(), vec![[820.0, 240.0]]);
    }

    #[test]
    fn projection_matches_a_hand_table() {
        // (x, y, z) -> (500 x / z + 320, 500 y / z + 240), worked out by hand.
        let joints = [
            [0.1, 0.2, 1.0],
            [-0.5, 0.25, 2.5],
            [1.0, -1.0, 4.0],
            [0.3, 0.3, 0.5],
            [-0.2, -0.4, 1.6],
            [0.0, 0.75, 3.0],
            [0.6, 0.0, 1.2],
            [-1.5, 0.5, 5.0],
            [0.05, -0.05, 0.25],
            [2.0, 2.0, 8.0],
        ];
        let expected = [
            [370.0, 340.0],
            [220.0, 290.0],
            [445.0, 115.0],
            [620.0, 540.0],
            [257.5, 115.0],
            [320.0, 365.0],
            [570.0, 240.0],
            [170.0, 290.0],
            [420.0, 140.0],
            [445.0, 365.0],
        ];
        let got = project_joints(&joints, &cam()).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g[0] - e[0]).abs() < 1e-9 && (g[1] - e[1]).abs() < 1e-9, "{g:?} vs {e:?}");
        }
    }

    #[test]
    fn non_positive_depth_names_the_joint() {
        let err = project_joints(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], &cam()).unwrap_err();
        assert!(matches!(err, Error::Projection { joint: 1, .. }));
    }

    fn frame(n: usize) -> (Vec<[f64; 3]>, Keypoints2D) {
        let joints: Vec<[f64; 3]> = (0..n).map(|i| [0.01 * i as f64, -0.02 * i as f64, 2.0 + 0.1 * i as f64]).collect();
        let points = project_joints(&joints, &cam()).unwrap();
        (joints, Keypoints2D { confidence: vec![0.9; n], points })
    }

    #[test]
    fn exact_keypoints_are_clean() {
        let (j, k) = frame(24);
        let check = flag_bad_frame(&j, &k, &cam(), HeadScale::new(20.0).unwrap(), &FilterParams::default()).unwrap();
        assert_eq!(check, FrameCheck { is_bad: false, deviant_joints: vec![] });
    }

    #[test]
    fn eleven_displaced_joints_make_a_bad_frame_ten_do_not() {
        let s = 20.0;
        for (count, bad) in [(11, true), (10, false)] {
            let (j, mut k) = frame(24);
            let moved: Vec<usize> = (0..count).map(|i| 2 * i).collect();
            for &i in &moved {
                k.points[i][0] += 2.0 * s;
            }
            let check = flag_bad_frame(&j, &k, &cam(), HeadScale::new(s).unwrap(), &FilterParams::default()).unwrap();
            assert_eq!(check.is_bad, bad);
            assert_eq!(check.deviant_joints, moved);
        }
    }

    #[test]
    fn low_confidence_joints_are_ignored() {
        let (j, mut k) = frame(24);
        for i in 0..15 {
            k.points[i][1] += 100.0;
            k.confidence[i] = 0.1;
        }
        let check = flag_bad_frame(&j, &k, &cam(), HeadScale::new(20.0).unwrap(), &FilterParams::default()).unwrap();
        assert!(!check.is_bad && check.deviant_joints.is_empty());
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let (j, k) = frame(5);
        let err = flag_bad_frame(&j[..4], &k, &cam(), HeadScale::new(1.0).unwrap(), &FilterParams::default());
        assert!(matches!(err, Err(Error::Input(_))));
    }

    fn seq(t: usize, segments: Vec<ActionSegment>) -> PoseSequence {
        let frames = Array2::from_shape_fn((t, 2), |(r, c)| (r * 2 + c) as f64);
        PoseSequence {
            frames,
            script: ActionScript::from_raw(segments),
            skeleton: Skeleton { joints: 1, pose_dim: 2, fps: 30.0 },
        }
    }

    #[test]
    fn all_good_mask_returns_the_input() {
        let s = seq(40, vec![ActionSegment::new(0, 0, 39)]);
        assert_eq!(split_on_mask(&s, &[false; 40], 30).unwrap(), vec![s]);
    }

    #[test]
    fn single_bad_frame_splits_and_remaps() {
        let s = seq(100, vec![ActionSegment::new(0, 0, 59), ActionSegment::new(1, 60, 99)]);
        let mut mask = vec![false; 100];
        mask[50] = true;
        let parts = split_on_mask(&s, &mask, 30).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!((parts[0].len(), parts[1].len()), (50, 49));
        assert_eq!(parts[0].script.segments(), &[ActionSegment::new(0, 0, 49)]);
        // second run covers original frames 51..=99
        assert_eq!(
            parts[1].script.segments(),
            &[ActionSegment::new(0, 0, 8), ActionSegment::new(1, 9, 48)]
        );
        assert_eq!(parts[1].frame(9), s.frame(60));
    }

    #[test]
    fn short_leading_run_is_discarded() {
        let s = seq(60, vec![ActionSegment::new(3, 0, 59)]);
        let mut mask = vec![false; 60];
        mask[29] = true;
        let parts = split_on_mask(&s, &mask, 30).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 30);
        assert_eq!(parts[0].frame(0), s.frame(30));
    }

    #[test]
    fn balanced_weights_examples() {
        let a = seq(2, vec![ActionSegment::new(0, 0, 1)]);
        let b = seq(
            3,
            vec![ActionSegment::new(1, 0, 0), ActionSegment::new(1, 1, 1), ActionSegment::new(1, 2, 2)],
        );
        let w = balanced_weights(&[a.clone(), b]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);

        let uniform: Vec<_> = (0..4).map(|l| seq(2, vec![ActionSegment::new(l, 0, 1)])).collect();
        let w = balanced_weights(&uniform).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        assert!(balanced_weights(&[]).is_err());
    }

    #[test]
    fn sampler_frequencies_match_weights() {
        let data: Vec<_> = [0usize, 0, 0, 1, 2, 2]
            .iter()
            .map(|&l| seq(2, vec![ActionSegment::new(l, 0, 1)]))
            .collect();
        let w = balanced_weights(&data).unwrap();
        let sampler = WeightedSampler::new(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut hits = vec![0usize; w.len()];
        for _ in 0..n {
            hits[sampler.sample(&mut rng)] += 1;
        }
        for (h, p) in hits.iter().zip(&w) {
            let freq = *h as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se, "freq {freq} vs p {p}");
        }
    }

    proptest! {
        #[test]
        fn raising_tau_never_adds_deviant_joints(
            offsets in prop::collection::vec(0.0f64..80.0, 16),
            tau in 0.1f64..3.0,
            bump in 0.0f64..2.0,
        ) {
            let (j, mut k) = frame(16);
            for (p, o) in k.points.iter_mut().zip(&offsets) {
                p[0] += o;
            }
            let s = HeadScale::new(20.0).unwrap();
            let lo = flag_bad_frame(&j, &k, &cam(), s, &FilterParams { tau, ..Default::default() }).unwrap();
            let hi = flag_bad_frame(&j, &k, &cam(), s, &FilterParams { tau: tau + bump, ..Default::default() }).unwrap();
            prop_assert!(hi.deviant_joints.iter().all(|i| lo.deviant_joints.contains(i)));
        }

        #[test]
        fn splitting_conserves_frames_and_remaps_exactly(
            mask in prop::collection::vec(prop::bool::weighted(0.05), 20..200),
            cut in 1usize..19,
            min_len in 1usize..40,
        ) {
            let t = mask.len();
            let s = seq(t, vec![ActionSegment::new(0, 0, cut.min(t - 1)), ActionSegment::new(1, cut.min(t - 1), t - 1)]);
            let parts = split_on_mask(&s, &mask, min_len).unwrap();
            let runs = good_runs(&mask);
            let good = mask.iter().filter(|b| !**b).count();
            let kept: usize = parts.iter().map(|p| p.len()).sum();
            let discarded: usize = runs.iter().map(|(a, b)| b + 1 - a).filter(|&l| l < min_len).sum();
            prop_assert_eq!(good, kept + discarded);
            for p in &parts {
                // locate the run by its first frame
                let (a, _) = runs.iter().find(|(a, _)| s.frame(*a) == p.frame(0)).copied().unwrap();
                for g in p.script.segments() {
                    for f in g.start..=g.end {
                        prop_assert_eq!(p.frame(f), s.frame(f + a));
                    }
                }
            }
        }
    }
}
