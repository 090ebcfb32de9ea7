//! The `generate`, `train`, `eval` and `score` commands.
//!
//! Every command is driven by a JSON [`RunConfig`] and writes its
//! artifacts under the output directory. Library callers use the `cmd_*`
//! functions directly; the `lstc` binary parses flags with [`Cli`] and maps
//! errors to exit codes with [`exit_code`].

mod commands;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_eval, cmd_generate, cmd_score, cmd_train, EvalReport, GenerateOutput, RunReport, Timings,
};

use crate::data::SynthConfig;
use crate::io::read_file;
use crate::training::TrainingConfig;
use crate::{Error, Result};

/// Where the videos come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory (for `train`) or written to disk (for `generate`).
    Synthetic(SynthConfig),
    /// Datasets on disk; `test` is optional.
    Manifests { train: PathBuf, test: Option<PathBuf> },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationToggles {
    /// Write one `curves/<id>.csv` per test video.
    pub export_curves: bool,
    /// Write one `attention/<id>.csv` rollout map per test video, taken
    /// from its highest-scoring window.
    pub export_attention: bool,
}

impl Default for EvaluationToggles {
    fn default() -> Self {
        Self {
            export_curves: true,
            export_attention: false,
        }
    }
}

/// A run configuration. The run `seed` replaces the `seed` fields of the
/// synthetic and training sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub training: TrainingConfig,
    pub evaluation: EvaluationToggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("lstc-run"),
            data: DataSource::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationToggles::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config; malformed JSON and unknown keys are configuration
    /// errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::config("config", format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig { field, reason } => Error::InvalidConfig {
                field,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = seed;
        }
    }

    /// Resolves relative manifest paths against `base` (the config file's
    /// directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Manifests { train, test } = &mut self.data {
            for p in std::iter::once(train).chain(test.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}

/// Process exit code for an error: 2 configuration, 3 data, 4 incompatible
/// artifacts.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig { .. } => 2,
        Error::Incompatible { .. } => 4,
        Error::Tensor(_) | Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Json { .. } => 3,
    }
}

#[derive(Debug, Parser)]
#[command(name = "lstc", version, about = "Long/short temporal co-teaching for video anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (feature files, ground truth, manifests).
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Co-teach STN and LTN; write checkpoints, round reports and a run report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Frame-level AUC of a checkpoint on a manifest, plus optional exports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one feature file and write its frame score curve.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let mut c = RunConfig::load(p)?;
            c.resolve_paths(p.parent().unwrap_or(Path::new(".")));
            c
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

/// Runs one parsed command and returns its exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Generate { config, out, seed } => load_config(config.as_deref(), out, seed).and_then(|c| {
            let o = cmd_generate(&c)?;
            println!("train manifest: {}", o.train_manifest.display());
            println!("test manifest: {}", o.test_manifest.display());
            Ok(())
        }),
        Command::Train { config, out, seed } => load_config(config.as_deref(), out, seed).and_then(|c| {
            let r = cmd_train(&c)?;
            println!("selected {} ({})", r.selection.chosen, r.selected_checkpoint.display());
            match r.test_frame_auc {
                Some(auc) => println!("test frame AUC: {auc:.4}"),
                None => println!("test frame AUC: n/a"),
            }
            Ok(())
        }),
        Command::Eval {
            checkpoint,
            manifest,
            config,
            out,
        } => load_config(config.as_deref(), out, None).and_then(|c| {
            let r = cmd_eval(&checkpoint, &manifest, &c.output_dir, &c.evaluation)?;
            match r.frame_auc {
                Some(auc) => println!("frame AUC: {auc:.4}"),
                None => println!("frame AUC: skipped (no frame ground truth)"),
            }
            Ok(())
        }),
        Command::Score { checkpoint, features, out } => {
            let out = out.unwrap_or_else(|| features.with_extension("csv"));
            cmd_score(&checkpoint, &features, &out).map(|_| println!("wrote {}", out.display()))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
