//! Sequence files: one JSON document per sequence.
//!
//! ```json
//! {"version": 1,
//!  "skeleton": {"J": 8, "D": 27, "fps": 30.0},
//!  "frames": [[...D numbers...], ...],
//!  "segments": [{"label": 0, "start": 0, "end": 29}]}
//! ```
//!
//! Numbers are written in shortest round-trip form and parsed exactly, so
//! `read(write(s)) == s` bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Map, Value};

use super::{validate_sequence, ActionScript, ActionSegment, PoseSequence, Skeleton, Violation};
use crate::error::{Error, Result};

pub const SEQUENCE_FORMAT_VERSION: u64 = 1;

pub fn sequence_to_json(seq: &PoseSequence) -> Result<String> {
    if let Some(v) = validate_sequence(seq).into_iter().next() {
        return Err(Error::Input(format!("refusing to write invalid sequence: {v}")));
    }
    let frames: Vec<Value> = seq
        .frames
        .rows()
        .into_iter()
        .map(|r| Value::Array(r.iter().map(|&v| json!(v)).collect()))
        .collect();
    let segments: Vec<Value> = seq
        .script
        .segments()
        .iter()
        .map(|s| json!({"label": s.label, "start": s.start, "end": s.end}))
        .collect();
    let doc = json!({
        "version": SEQUENCE_FORMAT_VERSION,
        "skeleton": {"J": seq.skeleton.joints, "D": seq.skeleton.pose_dim, "fps": seq.skeleton.fps},
        "frames": frames,
        "segments": segments,
    });
    Ok(serde_json::to_string(&doc)?)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::parse(format!("{path}{name}"), "missing field"))
}

fn as_index(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| Error::parse(path, "expected a non-negative integer"))
}

pub fn sequence_from_json(text: &str) -> Result<PoseSequence> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("document", e.to_string()))?;
    let root = doc
        .as_object()
        .ok_or_else(|| Error::parse("document", "expected a JSON object"))?;

    let version = as_index(field(root, "version", "")?, "version")?;
    if version as u64 != SEQUENCE_FORMAT_VERSION {
        return Err(Error::parse("version", format!("unsupported version {version}")));
    }

    let sk = field(root, "skeleton", "")?
        .as_object()
        .ok_or_else(|| Error::parse("skeleton", "expected an object"))?;
    let joints = as_index(field(sk, "J", "skeleton.")?, "skeleton.J")?;
    let pose_dim = as_index(field(sk, "D", "skeleton.")?, "skeleton.D")?;
    let fps = field(sk, "fps", "skeleton.")?
        .as_f64()
        .filter(|f| *f > 0.0)
        .ok_or_else(|| Error::parse("skeleton.fps", "expected a positive number"))?;

    let rows = field(root, "frames", "")?
        .as_array()
        .ok_or_else(|| Error::parse("frames", "expected an array"))?;
    if rows.is_empty() {
        return Err(Error::parse("frames", "sequence has no frames"));
    }
    let mut frames = Array2::zeros((rows.len(), pose_dim));
    for (t, row) in rows.iter().enumerate() {
        let vals = row
            .as_array()
            .ok_or_else(|| Error::parse(format!("frames[{t}]"), "expected an array"))?;
        if vals.len() != pose_dim {
            return Err(Error::parse(
                format!("frames[{t}]"),
                format!("has {} values but skeleton.D is {pose_dim}", vals.len()),
            ));
        }
        for (j, v) in vals.iter().enumerate() {
            frames[[t, j]] = v
                .as_f64()
                .ok_or_else(|| Error::parse(format!("frames[{t}][{j}]"), "expected a number"))?;
        }
    }

    let segs = field(root, "segments", "")?
        .as_array()
        .ok_or_else(|| Error::parse("segments", "expected an array"))?;
    let mut segments = Vec::with_capacity(segs.len());
    for (i, s) in segs.iter().enumerate() {
        let path = format!("segments[{i}]");
        let obj = s
            .as_object()
            .ok_or_else(|| Error::parse(&path, "expected an object"))?;
        let p = format!("{path}.");
        let label = as_index(field(obj, "label", &p)?, &format!("{p}label"))?;
        let start = as_index(field(obj, "start", &p)?, &format!("{p}start"))?;
        let end = as_index(field(obj, "end", &p)?, &format!("{p}end"))?;
        segments.push(ActionSegment::new(label, start, end));
    }

    let seq = PoseSequence {
        frames,
        script: ActionScript::from_raw(segments),
        skeleton: Skeleton {
            joints,
            pose_dim,
            fps,
        },
    };
    if let Some(v) = validate_sequence(&seq).into_iter().next() {
        let field = match &v {
            Violation::StartAfterEnd { segment } | Violation::Unordered { segment } => format!("segments[{segment}].start"),
            Violation::OutOfRange { segment, .. } => format!("segments[{segment}].end"),
            Violation::NonFinite { frame } => format!("frames[{frame}]"),
            Violation::EmptyScript => "segments".to_string(),
            Violation::NoFrames | Violation::PoseDimMismatch { .. } => "frames".to_string(),
        };
        return Err(Error::parse(field, v.to_string()));
    }
    Ok(seq)
}

pub fn write_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    crate::util::write_atomic(path.as_ref(), sequence_to_json(seq)?.as_bytes())
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let text = fs::read_to_string(path)?;
    sequence_from_json(&text)
}

/// Writes `seq_00000.json`, `seq_00001.json`, ... into `dir`.
pub fn write_sequence_dir(seqs: &[PoseSequence], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("seq_{i:05}.json"));
            write_sequence(s, &path)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.json` file in `dir`, in file-name order.
pub fn read_sequence_dir(dir: impl AsRef<Path>) -> Result<Vec<PoseSequence>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && !p.to_string_lossy().ends_with(".manifest.json")
        })
        .collect();
    paths.sort();
    paths.iter().map(read_sequence).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{make_synthetic_dataset, SyntheticDatasetConfig};
    use proptest::prelude::*;

    fn tiny() -> String {
        r#"{"version":1,"skeleton":{"J":1,"D":2,"fps":30.0},
            "frames":[[0.1,0.2],[0.3,0.4],[0.5,0.6]],
            "segments":[{"label":0,"start":0,"end":2}]}"#
            .to_string()
    }

    #[test]
    fn parses_a_minimal_document() {
        let seq = sequence_from_json(&tiny()).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.frames[[2, 1]], 0.6);
    }

    #[test]
    fn segment_past_end_names_the_field() {
        let text = tiny().replace(r#""end":2"#, r#""end":3"#);
        match sequence_from_json(&text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "segments[0].end"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_the_frame() {
        let text = tiny().replace("[0.3,0.4]", "[0.3,0.4,0.9]");
        match sequence_from_json(&text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "frames[1]"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = tiny().replace(r#""fps":30.0"#, r#""rate":30.0"#);
        match sequence_from_json(&text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "skeleton.fps"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn generated_sequences_round_trip_exactly() {
        let data = make_synthetic_dataset(&SyntheticDatasetConfig {
            num_sequences: 4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence_dir(&data, dir.path()).unwrap();
        let back = read_sequence_dir(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    proptest! {
        #[test]
        fn arbitrary_finite_values_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 6), tiny in -1e-300f64..1e-300) {
            let mut frames = Array2::from_shape_vec((3, 2), vals).unwrap();
            frames[[0, 0]] = tiny;
            let seq = PoseSequence {
                frames,
                script: ActionScript::from_raw(vec![ActionSegment::new(1, 0, 1), ActionSegment::new(0, 1, 2)]),
                skeleton: Skeleton { joints: 1, pose_dim: 2, fps: 29.97 },
            };
            let back = sequence_from_json(&sequence_to_json(&seq).unwrap()).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
