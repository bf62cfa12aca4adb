//! Batch command surface. `run` parses arguments, executes one pipeline stage
//! and writes a [`RunManifest`] next to its primary output.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalResult};
use crate::metrics::{mean_stderr, ClassifierConfig, LabelMatch, SequenceClassifier};
use crate::model::{load_checkpoint, save_checkpoint, GaussianNoise, ModelConfig, MotionVae, Variant};
use crate::motion::{make_synthetic_dataset, read_sequence, read_sequence_dir, write_sequence, write_sequence_dir, SyntheticDatasetConfig};
use crate::preprocess::{
    flag_sequence, read_camera, read_joints, read_keypoints, split_on_mask, FilterParams, HeadScale, HeadScaleSource,
};
use crate::training::{gradcheck, train, LossWeights, TrainConfig};
use crate::util::write_atomic;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "motion-vae", version, about = "Multi-action motion synthesis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// Seed for every random draw of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file overriding the command's default configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Primary output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset as a directory of sequence files.
    SynthData {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        num_sequences: Option<usize>,
    },
    /// Filter a sequence against 2D keypoints and split it around bad frames.
    Preprocess {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        joints: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Fixed head scale in pixels; otherwise measured from the head and neck keypoints.
        #[arg(long)]
        head_scale: Option<f64>,
        #[arg(long, default_value_t = 0)]
        head: usize,
        #[arg(long, default_value_t = 1)]
        neck: usize,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        kl_weight: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Train the evaluation classifier on ground-truth sequences.
    TrainClassifier {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate one sequence for a list of action labels.
    Generate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        actions: Vec<usize>,
        #[arg(long)]
        frames: usize,
    },
    /// Score a model against a ground-truth set.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        actions_per_seq: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        multiset: bool,
    },
    /// Turn evaluation results into `x,metric,value,stderr` rows.
    PlotData {
        #[command(flatten)]
        shared: Shared,
        /// One or more result files written by `eval`.
        #[arg(long, value_delimiter = ',', required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::Frames)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', default_value = "semantic_consistency")]
        metrics: Vec<String>,
    },
    /// Compare analytic and finite-difference gradients of the training loss.
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Re-run a command from its manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write to this path instead of the recorded output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Frames,
    Actions,
}

/// Provenance record written as `<out>.manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved invocation; replaying it needs nothing else.
    pub resolved: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_time_ms: u128,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    with_suffix(out, ".manifest.json")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SynthRun {
    config: SyntheticDatasetConfig,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PreprocessRun {
    sequence: PathBuf,
    joints: PathBuf,
    keypoints: PathBuf,
    camera: PathBuf,
    head_scale: Option<f64>,
    head: usize,
    neck: usize,
    filter: FilterParams,
    out: PathBuf,
}

/// Configuration file layout for `train`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainRun {
    data: PathBuf,
    settings: TrainFile,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ClassifierRun {
    data: PathBuf,
    num_classes: usize,
    config: ClassifierConfig,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GenerateRun {
    model: PathBuf,
    actions: Vec<usize>,
    frames: usize,
    seed: u64,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EvalRun {
    model: PathBuf,
    classifier: PathBuf,
    gt: PathBuf,
    config: EvalConfig,
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlotRun {
    results: Vec<PathBuf>,
    axis: Axis,
    metrics: Vec<String>,
    out: PathBuf,
}

/// Configuration file layout for `gradcheck`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckFile {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub eps: f64,
    pub coordinates: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckFile {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            batch_size: 2,
            eps: 1e-5,
            coordinates: 40,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GradcheckRun {
    data: PathBuf,
    settings: GradcheckFile,
    out: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::parse(p.display().to_string(), e.to_string())),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthData { shared, num_sequences } => {
            let mut config: SyntheticDatasetConfig = load_config(shared.config.as_deref())?;
            if let Some(s) = shared.seed {
                config.seed = s;
            }
            if let Some(n) = num_sequences {
                config.num_sequences = n;
            }
            execute("synth-data", &SynthRun { config, out: shared.out })
        }
        Command::Preprocess {
            shared,
            sequence,
            joints,
            keypoints,
            camera,
            head_scale,
            head,
            neck,
        } => {
            let filter: FilterParams = load_config(shared.config.as_deref())?;
            let run = PreprocessRun {
                sequence,
                joints,
                keypoints,
                camera,
                head_scale,
                head,
                neck,
                filter,
                out: shared.out,
            };
            execute("preprocess", &run)
        }
        Command::Train {
            shared,
            data,
            variant,
            epochs,
            kl_weight,
            learning_rate,
        } => {
            let mut settings: TrainFile = load_config(shared.config.as_deref())?;
            if let Some(v) = variant {
                settings.model.variant = v;
            }
            if let Some(e) = epochs {
                settings.train.epochs = e;
            }
            if let Some(k) = kl_weight {
                settings.loss.kl_weight = k;
            }
            if let Some(lr) = learning_rate {
                settings.train.learning_rate = lr;
            }
            if let Some(s) = shared.seed {
                settings.train.seed = s;
            }
            execute("train", &TrainRun { data, settings, out: shared.out })
        }
        Command::TrainClassifier {
            shared,
            data,
            num_classes,
            epochs,
        } => {
            let mut config: ClassifierConfig = load_config(shared.config.as_deref())?;
            if let Some(s) = shared.seed {
                config.seed = s;
            }
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let num_classes = match num_classes {
                Some(c) => c,
                None => infer_num_classes(&read_sequence_dir(&data)?)?,
            };
            execute(
                "train-classifier",
                &ClassifierRun {
                    data,
                    num_classes,
                    config,
                    out: shared.out,
                },
            )
        }
        Command::Generate {
            shared,
            model,
            actions,
            frames,
        } => {
            let run = GenerateRun {
                model,
                actions,
                frames,
                seed: shared.seed.unwrap_or(0),
                out: shared.out,
            };
            execute("generate", &run)
        }
        Command::Eval {
            shared,
            model,
            classifier,
            gt,
            num_samples,
            lengths,
            actions_per_seq,
            repeats,
            multiset,
        } => {
            let mut config: EvalConfig = load_config(shared.config.as_deref())?;
            if let Some(s) = shared.seed {
                config.seed = s;
            }
            if let Some(n) = num_samples {
                config.num_samples = n;
            }
            if let Some(l) = lengths {
                config.lengths = l;
            }
            if let Some(k) = actions_per_seq {
                config.actions_per_seq = k;
            }
            if let Some(r) = repeats {
                config.repeats = r;
            }
            if multiset {
                config.label_match = LabelMatch::Multiset;
            }
            execute(
                "eval",
                &EvalRun {
                    model,
                    classifier,
                    gt,
                    config,
                    out: shared.out,
                },
            )
        }
        Command::PlotData {
            shared,
            results,
            axis,
            metrics,
        } => execute(
            "plot-data",
            &PlotRun {
                results,
                axis,
                metrics,
                out: shared.out,
            },
        ),
        Command::Gradcheck { shared, data, variant } => {
            let mut settings: GradcheckFile = load_config(shared.config.as_deref())?;
            if let Some(v) = variant {
                settings.model.variant = v;
            }
            if let Some(s) = shared.seed {
                settings.seed = s;
            }
            execute("gradcheck", &GradcheckRun { data, settings, out: shared.out })
        }
        Command::Replay { manifest, out } => replay(&manifest, out),
    }
}

fn infer_num_classes(data: &[crate::motion::PoseSequence]) -> Result<usize> {
    data.iter()
        .flat_map(|s| s.script.segments().iter().map(|g| g.label + 1))
        .max()
        .ok_or_else(|| Error::Input("dataset has no labelled segments".into()))
}

/// Per-command execution over a fully resolved invocation.
trait Execute: Serialize {
    fn seed(&self) -> u64;
    fn out(&self) -> &Path;
    fn set_out(&mut self, out: PathBuf);
    /// Runs the command and returns `(inputs, outputs)`.
    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)>;
}

fn execute<R: Execute>(command: &str, run: &R) -> Result<()> {
    let start = Instant::now();
    let (inputs, outputs) = run.execute()?;
    let manifest = RunManifest {
        command: command.to_string(),
        resolved: serde_json::to_value(run)?,
        seed: run.seed(),
        inputs,
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_ms: start.elapsed().as_millis(),
    };
    write_atomic(&manifest_path(run.out()), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

fn replay_as<R: Execute + DeserializeOwned>(manifest: &RunManifest, out: Option<PathBuf>) -> Result<()> {
    let mut run: R = serde_json::from_value(manifest.resolved.clone())
        .map_err(|e| Error::parse("resolved", e.to_string()))?;
    if let Some(o) = out {
        run.set_out(o);
    }
    execute(&manifest.command, &run)
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    match manifest.command.as_str() {
        "synth-data" => replay_as::<SynthRun>(&manifest, out),
        "preprocess" => replay_as::<PreprocessRun>(&manifest, out),
        "train" => replay_as::<TrainRun>(&manifest, out),
        "train-classifier" => replay_as::<ClassifierRun>(&manifest, out),
        "generate" => replay_as::<GenerateRun>(&manifest, out),
        "eval" => replay_as::<EvalRun>(&manifest, out),
        "plot-data" => replay_as::<PlotRun>(&manifest, out),
        "gradcheck" => replay_as::<GradcheckRun>(&manifest, out),
        other => Err(Error::parse("command", format!("unknown command `{other}`"))),
    }
}

macro_rules! out_accessors {
    () => {
        fn out(&self) -> &Path {
            &self.out
        }
        fn set_out(&mut self, out: PathBuf) {
            self.out = out;
        }
    };
}

impl Execute for SynthRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let data = make_synthetic_dataset(&self.config)?;
        let files = write_sequence_dir(&data, &self.out)?;
        Ok((vec![], files))
    }
}

impl Execute for PreprocessRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        0
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let seq = read_sequence(&self.sequence)?;
        let joints = read_joints(&self.joints)?;
        let keypoints = read_keypoints(&self.keypoints)?;
        let camera = read_camera(&self.camera)?;
        let scale = match self.head_scale {
            Some(px) => HeadScaleSource::Fixed(HeadScale::new(px)?),
            None => HeadScaleSource::Keypoints {
                head: self.head,
                neck: self.neck,
            },
        };
        let checks = flag_sequence(&joints, &keypoints, &camera, scale, &self.filter)?;
        let bad: Vec<bool> = checks.iter().map(|c| c.is_bad).collect();
        let pieces = split_on_mask(&seq, &bad, self.filter.min_subsequence_len)?;
        let mut outputs = write_sequence_dir(&pieces, &self.out)?;
        let mask = MaskReport {
            bad_frames: bad.iter().filter(|&&b| b).count(),
            kept_frames: pieces.iter().map(|p| p.len()).sum(),
            bad,
            deviant_joints: checks.into_iter().map(|c| c.deviant_joints).collect(),
        };
        let mask_path = with_suffix(&self.out, ".mask.json");
        write_atomic(&mask_path, serde_json::to_string(&mask)?.as_bytes())?;
        outputs.push(mask_path);
        Ok((
            vec![self.sequence.clone(), self.joints.clone(), self.keypoints.clone(), self.camera.clone()],
            outputs,
        ))
    }
}

#[derive(Serialize)]
struct MaskReport {
    bad_frames: usize,
    kept_frames: usize,
    bad: Vec<bool>,
    deviant_joints: Vec<Vec<usize>>,
}

impl Execute for TrainRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.settings.train.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let data = read_sequence_dir(&self.data)?;
        let mut model = MotionVae::new(self.settings.model.clone(), self.settings.train.seed)?;
        let report = train(&mut model, &data, &self.settings.train, &self.settings.loss, None)?;
        save_checkpoint(&model, &self.out)?;
        let mut log = String::from("step,recon,kl,total\n");
        for (i, s) in report.steps.iter().enumerate() {
            log.push_str(&format!("{},{},{},{}\n", i + 1, s.recon, s.kl, s.total));
        }
        let log_path = with_suffix(&self.out, ".log.csv");
        write_atomic(&log_path, log.as_bytes())?;
        Ok((vec![self.data.clone()], vec![self.out.clone(), log_path]))
    }
}

impl Execute for ClassifierRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let data = read_sequence_dir(&self.data)?;
        let (classifier, report) = SequenceClassifier::train(&data, self.num_classes, &self.config)?;
        classifier.save(&self.out)?;
        let report_path = with_suffix(&self.out, ".report.json");
        write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok((vec![self.data.clone()], vec![self.out.clone(), report_path]))
    }
}

impl Execute for GenerateRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let model = load_checkpoint(&self.model)?;
        let seq = model.generate(&self.actions, self.frames, &mut GaussianNoise::new(self.seed))?;
        write_sequence(&seq, &self.out)?;
        Ok((vec![self.model.clone()], vec![self.out.clone()]))
    }
}

impl Execute for EvalRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let model = load_checkpoint(&self.model)?;
        let classifier = SequenceClassifier::load(&self.classifier)?;
        let gt = read_sequence_dir(&self.gt)?;
        let results = evaluate(&model, &classifier, &gt, &self.config)?;
        write_atomic(&self.out, serde_json::to_string_pretty(&results)?.as_bytes())?;
        let mut csv = String::from("frames,actions,metric,value,stderr\n");
        for r in &results {
            for m in &r.report.metrics {
                let se = m.stderr.map(|s| s.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{},{},{}\n", r.frames, r.actions, m.metric, m.value, se));
            }
        }
        let csv_path = with_suffix(&self.out, ".csv");
        write_atomic(&csv_path, csv.as_bytes())?;
        Ok((
            vec![self.model.clone(), self.classifier.clone(), self.gt.clone()],
            vec![self.out.clone(), csv_path],
        ))
    }
}

impl Execute for PlotRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        0
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let mut results = Vec::new();
        for path in &self.results {
            let text = std::fs::read_to_string(path)?;
            let mut r: Vec<EvalResult> =
                serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            results.append(&mut r);
        }
        let csv = plot_rows(&results, self.axis, &self.metrics)?;
        write_atomic(&self.out, csv.as_bytes())?;
        Ok((self.results.clone(), vec![self.out.clone()]))
    }
}

/// CSV `x,metric,value,stderr` sorted by `(x, metric order)`.
///
/// Rows sharing an x are aggregated: their mean is reported with the standard
/// error over those rows; a lone row keeps its own recorded standard error.
pub fn plot_rows(results: &[EvalResult], axis: Axis, metrics: &[String]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Input("no evaluation results to plot".into()));
    }
    let mut out = String::from("x,metric,value,stderr\n");
    let mut grouped: BTreeMap<usize, Vec<&EvalResult>> = BTreeMap::new();
    for r in results {
        let x = match axis {
            Axis::Frames => r.frames,
            Axis::Actions => r.actions,
        };
        grouped.entry(x).or_default().push(r);
    }
    for (x, rows) in grouped {
        for metric in metrics {
            let values = rows
                .iter()
                .map(|r| r.report.get(metric).ok_or_else(|| Error::Input(format!("metric `{metric}` is missing from the results"))))
                .collect::<Result<Vec<_>>>()?;
            let (value, stderr) = if values.len() == 1 {
                (values[0].value, values[0].stderr.unwrap_or(0.0))
            } else {
                mean_stderr(&values.iter().map(|v| v.value).collect::<Vec<_>>())
            };
            out.push_str(&format!("{x},{metric},{value},{stderr}\n"));
        }
    }
    Ok(out)
}

impl Execute for GradcheckRun {
    out_accessors!();

    fn seed(&self) -> u64 {
        self.settings.seed
    }

    fn execute(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let s = &self.settings;
        let data = read_sequence_dir(&self.data)?;
        if data.is_empty() {
            return Err(Error::Input("gradcheck needs at least one sequence".into()));
        }
        let mut model = MotionVae::new(s.model.clone(), s.seed)?;
        let batch: Vec<_> = data.iter().take(s.batch_size.max(1)).collect();
        let report = gradcheck(&mut model, &batch, &s.loss, s.eps, s.coordinates, s.seed)?;
        write_atomic(&self.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
        if report.max_rel_error > s.tolerance {
            return Err(Error::Input(format!(
                "max relative error {:.3e} at {}[{}, {}] exceeds {:.1e}",
                report.max_rel_error, report.worst.0, report.worst.1, report.worst.2, s.tolerance
            )));
        }
        let mut stdout = std::io::stdout();
        let _ = writeln!(stdout, "gradcheck ok: max relative error {:.3e}", report.max_rel_error);
        Ok((vec![self.data.clone()], vec![self.out.clone()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;

    fn result(frames: usize, actions: usize, value: f64) -> EvalResult {
        let mut report = MetricReport::default();
        report.push("semantic_consistency", value, Some(0.1));
        EvalResult { frames, actions, report }
    }

    #[test]
    fn plot_rows_sort_by_x() {
        let rows = vec![result(120, 2, 0.3), result(60, 2, 0.9), result(80, 2, 0.5)];
        let csv = plot_rows(&rows, Axis::Frames, &["semantic_consistency".into()]).unwrap();
        assert_eq!(
            csv,
            "x,metric,value,stderr\n60,semantic_consistency,0.9,0.1\n80,semantic_consistency,0.5,0.1\n120,semantic_consistency,0.3,0.1\n"
        );
    }

    #[test]
    fn duplicate_x_values_are_aggregated() {
        let rows = vec![result(60, 1, 0.2), result(60, 2, 0.4), result(60, 3, 0.9)];
        let csv = plot_rows(&rows, Axis::Frames, &["semantic_consistency".into()]).unwrap();
        // mean 0.5, sample variance 0.13, stderr sqrt(0.13 / 3)
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert!((fields[2].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
        assert!((fields[3].parse::<f64>().unwrap() - (0.13f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn missing_metric_and_empty_results_are_errors() {
        let err = plot_rows(&[result(60, 1, 0.2)], Axis::Frames, &["fid".into()]).unwrap_err();
        assert!(err.to_string().contains("fid"));
        assert!(plot_rows(&[], Axis::Frames, &["fid".into()]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["motion-vae", "generate", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["motion-vae"]), EXIT_USAGE);
        assert_eq!(run(["motion-vae", "--help"]), EXIT_OK);
    }
}
