mod commands;
mod config;
mod runtime;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rehab_vlm::ingest::IngestError;
use rehab_vlm::metrics::MetricError;
use rehab_vlm::primpipe::PromptingMode;
use rehab_vlm::vlm::VlmError;
use rehab_vlm::{ErrorCategory, ParseValueError};

use commands::{FmaMethod, GroupBy, MetricsInput, TransitionSource};
use config::{Config, ConfigError, Overrides};
use runtime::{BackendArgs, Runtime};

/// Motor-primitive recognition, activity identification and Fugl-Meyer scoring
/// for rehabilitation videos with a vision-language model.
#[derive(Debug, Parser)]
#[command(name = "rehab-vlm", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chat-completions endpoint; overrides backend.url.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Model name sent to the backend; overrides backend.model.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Worker threads (0 = all cores, 1 = sequential); overrides run.parallelism.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Random seed; overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides run.output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the activity shown in each video.
    ActivityId {
        #[arg(long)]
        manifest: PathBuf,
        /// `direct`, `optimized`, or a path to a prompt file.
        #[arg(long, default_value = "optimized")]
        catalog: String,
    },
    /// Predict primitive sequences with single, decomposed or contextual prompting.
    InferPrimitives {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Decomposed)]
        mode: Mode,
        /// Crop frames around the tracked hand (needs keypoints).
        #[arg(long)]
        crop: bool,
    },
    /// Predict primitive sequences with the rule-based state pipeline.
    Primrs {
        #[arg(long)]
        manifest: PathBuf,
        /// Use full frames and ask the model about every segment.
        #[arg(long)]
        no_crop: bool,
        /// Skip smoothing and block assignment.
        #[arg(long)]
        no_postprocess: bool,
    },
    /// Reference predictions that need no model.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Score Fugl-Meyer items from clips.
    Fma {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        args: FmaArgs,
    },
    /// Compare predicted sequences with annotations.
    Metrics(MetricsArgs),
    /// Diagnostic probes.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Metrics broken down by impairment level, activity or subject.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of `<video>.sequence.txt` predictions.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value_t = Group::Impairment)]
        by: Group,
    },
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Sequences sampled from a four-state motion/grasp Markov chain.
    Markov {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON transition matrix (`{"matrix": [[..4..] x4]}`).
        #[arg(long, conflicts_with = "train_manifest")]
        transitions: Option<PathBuf>,
        /// Estimate transitions from this manifest's annotations instead of `--manifest`.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
    },
    /// Sequences reconstructed from ground-truth states at segment midpoints.
    Omniscient {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Ask about both hands on segments where only one is moving.
    CrossHand {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        crop: bool,
    },
}

#[derive(Debug, Args)]
struct FmaArgs {
    /// CSV: subject_id,fm_video,video_path,native_fps,start_s,end_s[,frame_count].
    #[arg(long)]
    clips: PathBuf,
    /// Question CSV.
    #[arg(long)]
    questions: PathBuf,
    /// CSV of clinician totals: subject_id,total.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Ground-truth sequence file (one comma-separated line).
    #[arg(long, requires = "pred", conflicts_with = "manifest")]
    gt: Option<PathBuf>,
    /// Predicted sequence file.
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    /// Manifest whose annotations are the ground truth.
    #[arg(long, requires = "predictions", required_unless_present = "gt")]
    manifest: Option<PathBuf>,
    /// Directory of `<video>.sequence.txt` predictions.
    #[arg(long, requires = "manifest")]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Decomposed,
    Contextual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Qa,
    Cot,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Group {
    Impairment,
    Activity,
    Subject,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        backend_url: cli.backend_url,
        model: cli.model,
        parallelism: cli.parallelism,
        seed: cli.seed,
        output_dir: cli.output_dir,
    };
    let cfg = Config::load(cli.config.as_deref(), &overrides)?;
    let rt = Runtime::new(cfg, cli.backend)?;
    match cli.command {
        Command::ActivityId { manifest, catalog } => commands::activity_id(&rt, &manifest, &catalog),
        Command::InferPrimitives { manifest, mode, crop } => {
            let mode = match mode {
                Mode::Single => PromptingMode::Single,
                Mode::Decomposed => PromptingMode::Decomposed,
                Mode::Contextual => PromptingMode::Contextual,
            };
            commands::infer_primitives(&rt, &manifest, mode, crop)
        }
        Command::Primrs { manifest, no_crop, no_postprocess } => {
            commands::primrs(&rt, &manifest, !no_crop, !no_postprocess)
        }
        Command::Baseline(BaselineCommand::Markov { manifest, transitions, train_manifest }) => {
            let source = match (transitions, train_manifest) {
                (Some(t), _) => TransitionSource::File(t),
                (None, Some(t)) => TransitionSource::Train(t),
                (None, None) => TransitionSource::Manifest,
            };
            commands::baseline_markov(&rt, &manifest, source)
        }
        Command::Baseline(BaselineCommand::Omniscient { manifest }) => commands::baseline_omniscient(&rt, &manifest),
        Command::Fma { method, args } => {
            let method = match method {
                Method::Qa => FmaMethod::Qa,
                Method::Cot => FmaMethod::Cot,
            };
            commands::fma(&rt, method, &args.clips, &args.questions, args.truth.as_deref())
        }
        Command::Metrics(a) => {
            let input = match (a.gt, a.pred, a.manifest, a.predictions) {
                (Some(gt), Some(pred), _, _) => MetricsInput::Files { gt, pred },
                (_, _, Some(manifest), Some(predictions)) => MetricsInput::Manifest { manifest, predictions },
                _ => return Err(ConfigError("metrics needs --gt/--pred or --manifest/--predictions".into()).into()),
            };
            commands::metrics(&rt, input)
        }
        Command::Probe(ProbeCommand::CrossHand { manifest, crop }) => commands::probe_cross_hand(&rt, &manifest, crop),
        Command::Report { manifest, predictions, by } => {
            let by = match by {
                Group::Impairment => GroupBy::Impairment,
                Group::Activity => GroupBy::Activity,
                Group::Subject => GroupBy::Subject,
            };
            commands::report(&rt, &manifest, &predictions, by)
        }
    }
}

/// Exit code and label for the first recognised cause in the error chain.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    const CONFIG: (u8, &str) = (2, "config");
    const INPUT: (u8, &str) = (3, "input");
    const BACKEND: (u8, &str) = (4, "backend");
    const IO: (u8, &str) = (5, "io");
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<rehab_vlm::Error>() {
            return match e.category() {
                ErrorCategory::Input => INPUT,
                ErrorCategory::Backend => BACKEND,
                ErrorCategory::Extraction | ErrorCategory::Io => IO,
            };
        }
        if cause.is::<VlmError>() {
            return BACKEND;
        }
        if let Some(e) = cause.downcast_ref::<IngestError>() {
            return match e {
                IngestError::Io { .. } | IngestError::Extraction { .. } => IO,
                _ => INPUT,
            };
        }
        if cause.is::<MetricError>() || cause.is::<ParseValueError>() {
            return INPUT;
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    (1, "internal")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, label) = classify(&e);
            eprintln!("error[{label}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
