//! Command-line front end: `gen-data`, `train`, `infer` and `eval`.
//!
//! Exit codes: 0 success, 1 bad arguments or config, 2 missing or unreadable
//! files, 3 training diverged, 4 checkpoint does not fit the model.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::{
    evaluate, evaluate_predictions, infer_video, iocs_infer_all, load_checkpoint, save_checkpoint, train, TrainConfig,
};
use crate::synth::{generate_dataset, load_video, mask_file, read_frames, write_mask, DatasetSpec, Manifest, Split};

/// Settings read from a `key=value` file. Missing keys keep their defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub canvas: usize,
    pub channels: usize,
    pub downsample: usize,
    pub frames_per_video: usize,
    pub n_prime_train: usize,
    pub n_prime_test: usize,
    pub k_iters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            canvas: 64,
            channels: t.model.encoder.channels,
            downsample: t.model.encoder.downsample,
            frames_per_video: 24,
            n_prime_train: t.n_prime,
            n_prime_test: 5,
            k_iters: t.model.graph.k_iters,
            lr: t.lr,
            momentum: t.momentum,
            iters: t.iters,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: [&str; 12] = [
    "canvas",
    "channels",
    "downsample",
    "frames_per_video",
    "n_prime_train",
    "n_prime_test",
    "k_iters",
    "lr",
    "momentum",
    "iters",
    "seed",
    "out_dir",
];

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
                v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for key {key}")))
            }
            match key {
                "canvas" => c.canvas = num(key, value)?,
                "channels" => c.channels = num(key, value)?,
                "downsample" => c.downsample = num(key, value)?,
                "frames_per_video" => c.frames_per_video = num(key, value)?,
                "n_prime_train" => c.n_prime_train = num(key, value)?,
                "n_prime_test" => c.n_prime_test = num(key, value)?,
                "k_iters" => c.k_iters = num(key, value)?,
                "lr" => c.lr = num(key, value)?,
                "momentum" => c.momentum = num(key, value)?,
                "iters" => c.iters = num(key, value)?,
                "seed" => c.seed = num(key, value)?,
                "out_dir" => c.out_dir = PathBuf::from(value),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        c.model_config().validate()?;
        if c.canvas == 0 || c.frames_per_video == 0 || c.n_prime_test == 0 {
            return Err(Error::Config("canvas, frames_per_video and n_prime_test must be positive".into()));
        }
        if c.canvas % c.downsample != 0 {
            return Err(Error::Config(format!(
                "canvas {} is not divisible by downsample {}",
                c.canvas, c.downsample
            )));
        }
        c.train_config().validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text)
    }

    fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            canvas: self.canvas,
            frames_per_video: self.frames_per_video,
            ..DatasetSpec::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::default();
        m.encoder.channels = self.channels;
        m.encoder.downsample = self.downsample;
        m.graph.k_iters = self.k_iters;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            n_prime: self.n_prime_train,
            lr: self.lr,
            momentum: self.momentum,
            iters: self.iters,
            static_noise: DatasetSpec::default().noise,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "agnn", version, about = "Attentive graph segmentation on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Task {
    Video,
    Coseg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (defaults to `out_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the train split; writes `checkpoint.agnn` and `loss.csv`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment the frames of one directory; writes one mask per frame.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Nodes per graph (default 5).
        #[arg(long)]
        n_prime: Option<usize>,
        #[arg(long, value_enum, default_value = "video")]
        task: Task,
        /// Reject checkpoints whose model differs from this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print per-video and mean J/F of a split as CSV.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Score existing mask files laid out like the dataset instead.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        n_prime: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Missing(_) | Error::Io { .. } | Error::Format { .. } => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 3,
        Error::CheckpointMismatch(_) | Error::Shape { .. } => 4,
        Error::Tape(_) => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{text}");
                0
            } else {
                let _ = write!(stderr, "{text}");
                1
            };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { config, out } => {
            let c = RunConfig::load_or_default(config.as_deref())?;
            let out = out.unwrap_or_else(|| c.out_dir.clone());
            let m = generate_dataset(&c.dataset_spec(), c.seed, &out)?;
            let _ = writeln!(stderr, "wrote {} entries to {}", m.entries.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let c = RunConfig::load_or_default(config.as_deref())?;
            let out = out.unwrap_or_else(|| c.out_dir.clone());
            let manifest = Manifest::load(&data)?;
            let videos = manifest
                .split(Split::Train)
                .map(|e| load_video(&data, e))
                .collect::<Result<Vec<_>>>()?;
            if videos.is_empty() {
                return Err(Error::Missing(data.join(Split::Train.name())));
            }
            create_dir(&out)?;
            let mut log = String::from("iteration,loss\n");
            let total = c.iters;
            let model = train(&videos, c.train_config(), |it, _, loss| {
                log.push_str(&format!("{it},{loss}\n"));
                if (it + 1) % 100 == 0 || it + 1 == total {
                    let _ = writeln!(stderr, "iteration {}/{total} loss {loss:.4}", it + 1);
                }
            })?;
            save_checkpoint(&out.join("checkpoint.agnn"), &model)?;
            let path = out.join("loss.csv");
            fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
        }
        Command::Infer {
            checkpoint,
            video_dir,
            out,
            n_prime,
            task,
            config,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            if let Some(path) = config {
                let expected = RunConfig::load(&path)?.model_config();
                if expected != model.config {
                    return Err(Error::CheckpointMismatch(format!(
                        "checkpoint holds {:?}, config asks for {:?}",
                        model.config, expected
                    )));
                }
            }
            let frames = read_frames(&video_dir)?;
            if frames.is_empty() {
                return Err(Error::Missing(video_dir.join(crate::synth::frame_file(0))));
            }
            let n_prime = n_prime.unwrap_or(5);
            let masks = match task {
                Task::Video => infer_video(&model, &frames, n_prime)?,
                Task::Coseg => iocs_infer_all(&model, &frames, n_prime)?,
            };
            create_dir(&out)?;
            for (k, m) in masks.iter().enumerate() {
                write_mask(&out.join(mask_file(k)), m)?;
            }
            let _ = writeln!(stderr, "wrote {} masks to {}", masks.len(), out.display());
        }
        Command::Eval {
            checkpoint,
            predictions,
            data,
            split,
            n_prime,
            config,
        } => {
            let split: Split = split.parse()?;
            let c = RunConfig::load_or_default(config.as_deref())?;
            let manifest = Manifest::load(&data)?;
            let report = match (checkpoint, predictions) {
                (_, Some(pred)) => evaluate_predictions(&data, &manifest, split, &pred)?,
                (Some(ck), None) => {
                    let model = load_checkpoint(&ck)?;
                    evaluate(&data, &manifest, split, &model, n_prime.unwrap_or(c.n_prime_test))?
                }
                (None, None) => return Err(Error::Config("eval needs --checkpoint or --predictions".into())),
            };
            write!(stdout, "{}", report.to_csv()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
