//! Pose sequences, action scripts, the synthetic motion generator and sequence files.

mod io;
mod synth;

use std::fmt;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_sequence, read_sequence_dir, sequence_from_json, sequence_to_json, write_sequence, write_sequence_dir, SEQUENCE_FORMAT_VERSION};
pub use synth::{class_primitive, make_synthetic_dataset, ClassPrimitive, SyntheticDatasetConfig};

/// Skeleton metadata carried with every sequence.
///
/// The pose vector is opaque to the model; `joints` is informational.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: usize,
    pub pose_dim: usize,
    pub fps: f64,
}

/// A labelled, inclusive frame span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSegment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

impl ActionSegment {
    pub fn new(label: usize, start: usize, end: usize) -> Self {
        Self { label, start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Ordered list of action segments; segments may overlap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    segments: Vec<ActionSegment>,
}

impl ActionScript {
    /// Builds a script, stably sorting segments by start frame.
    pub fn new(mut segments: Vec<ActionSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Input("an action script needs at least one segment".into()));
        }
        if let Some((i, seg)) = segments.iter().enumerate().find(|(_, s)| s.start > s.end) {
            return Err(Error::Input(format!(
                "segment {i} starts at {} after it ends at {}",
                seg.start, seg.end
            )));
        }
        segments.sort_by_key(|s| s.start);
        Ok(Self { segments })
    }

    /// Unchecked constructor for values that may violate invariants (used by validation tests and parsers).
    pub fn from_raw(segments: Vec<ActionSegment>) -> Self {
        Self { segments }
    }

    /// Splits `frames` evenly across `labels`, earlier spans absorbing the remainder.
    pub fn equal_partition(labels: &[usize], frames: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("at least one action label is required".into()));
        }
        if frames < labels.len() {
            return Err(Error::Input(format!(
                "{frames} frames cannot hold {} actions",
                labels.len()
            )));
        }
        let k = labels.len();
        let base = frames / k;
        let extra = frames % k;
        let mut start = 0;
        let segments = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let len = base + usize::from(i < extra);
                let seg = ActionSegment::new(label, start, start + len - 1);
                start += len;
                seg
            })
            .collect();
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[ActionSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.label).collect()
    }

    /// Indices of the segments covering frame `t`.
    pub fn active_at(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.contains(t))
            .map(|(i, _)| i)
    }
}

/// A `T×D` pose array with its action script.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub frames: Array2<f64>,
    pub script: ActionScript,
    pub skeleton: Skeleton,
}

impl PoseSequence {
    pub fn new(frames: Array2<f64>, script: ActionScript, skeleton: Skeleton) -> Result<Self> {
        let seq = Self {
            frames,
            script,
            skeleton,
        };
        match validate_sequence(&seq).into_iter().next() {
            Some(v) => Err(Error::Input(v.to_string())),
            None => Ok(seq),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn pose_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    /// Frames `start..=end`.
    pub fn span(&self, start: usize, end: usize) -> ArrayView2<'_, f64> {
        self.frames.slice(s![start..=end, ..])
    }

    /// Fails if any label is outside `0..num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.script.segments().iter().find(|s| s.label >= num_classes) {
            Some(seg) => Err(Error::Input(format!(
                "action label {} is outside the vocabulary of {num_classes} classes",
                seg.label
            ))),
            None => Ok(()),
        }
    }
}

/// A broken [`PoseSequence`] invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoFrames,
    PoseDimMismatch { declared: usize, actual: usize },
    NonFinite { frame: usize },
    EmptyScript,
    StartAfterEnd { segment: usize },
    OutOfRange { segment: usize, frames: usize },
    Unordered { segment: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "sequence has no frames"),
            Violation::PoseDimMismatch { declared, actual } => {
                write!(f, "skeleton declares D={declared} but frames have {actual} values")
            }
            Violation::NonFinite { frame } => write!(f, "frame {frame} contains a non-finite value"),
            Violation::EmptyScript => write!(f, "action script is empty"),
            Violation::StartAfterEnd { segment } => write!(f, "segment {segment} starts after it ends"),
            Violation::OutOfRange { segment, frames } => {
                write!(f, "segment {segment} extends past the last frame ({frames} frames)")
            }
            Violation::Unordered { segment } => {
                write!(f, "segment {segment} starts before its predecessor")
            }
        }
    }
}

/// Lists every invariant the sequence breaks; empty means valid.
pub fn validate_sequence(seq: &PoseSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = seq.frames.nrows();
    if t == 0 {
        out.push(Violation::NoFrames);
    }
    if seq.skeleton.pose_dim != seq.frames.ncols() {
        out.push(Violation::PoseDimMismatch {
            declared: seq.skeleton.pose_dim,
            actual: seq.frames.ncols(),
        });
    }
    for (i, row) in seq.frames.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { frame: i });
        }
    }
    let segs = seq.script.segments();
    if segs.is_empty() {
        out.push(Violation::EmptyScript);
    }
    for (i, seg) in segs.iter().enumerate() {
        if seg.start > seg.end {
            out.push(Violation::StartAfterEnd { segment: i });
        }
        if seg.end >= t || seg.start >= t {
            out.push(Violation::OutOfRange { segment: i, frames: t });
        }
        if i > 0 && seg.start < segs[i - 1].start {
            out.push(Violation::Unordered { segment: i });
        }
    }
    out
}
