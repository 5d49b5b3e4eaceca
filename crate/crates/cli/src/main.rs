use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use vlf_core::qg::QgProfile;

mod commands;

#[derive(Parser)]
#[command(
    name = "vlf",
    version,
    about = "Build and evaluate video answer-localization datasets"
)]
struct Cli {
    /// Directory for models and outputs when no explicit path is given.
    #[arg(long, global = true, env = "VLF_DATA_DIR", default_value = "vlf-data")]
    data_dir: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaggerMode {
    Crf,
    Prompt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum QgStyle {
    BartStyle,
    T5Style,
}

impl From<QgStyle> for QgProfile {
    fn from(s: QgStyle) -> Self {
        match s {
            QgStyle::BartStyle => QgProfile::BartStyle,
            QgStyle::T5Style => QgProfile::T5Style,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Iou,
    Wf1,
    Bleu,
    Rouge,
    Agreement,
}

#[derive(Subcommand)]
enum Command {
    /// Parse every video's subtitles and select the medical instructional ones.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Saved classifier; trained on the manifest labels when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Train a segment tagger on annotated answers.
    TrainTagger {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "crf")]
        mode: TaggerMode,
        /// Prompt template number (1-9).
        #[arg(long, default_value_t = 1)]
        template: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-video segment tags as JSON lines.
    Tag {
        #[arg(long)]
        manifest: PathBuf,
        /// Tag with a trained model.
        #[arg(long, conflicts_with = "gold")]
        tagger: Option<PathBuf>,
        /// Derive tags from annotated answers instead.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the question generator on annotated answers.
    TrainQg {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "bart-style")]
        qg: QgStyle,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate questions from text or from the answer windows of a dataset.
    Qgen {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["manifest", "dataset"])]
        text: Option<String>,
        #[arg(long, requires = "dataset")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run selection, tagging and question generation over a corpus.
    BuildDataset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        tagger: Option<PathBuf>,
        #[arg(long)]
        qg: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute dataset statistics and check them against the emitted ones.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Dataset directory or dataset.jsonl file.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Train the span localizer, optionally with the question-generation cycle.
    TrainLocalizer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ccal: bool,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        fusion: bool,
        /// Pool frames per word instead of per video.
        #[arg(long, requires = "fusion")]
        per_word: bool,
        #[arg(long, value_enum, default_value = "bart-style")]
        qg: QgStyle,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict answer spans for every question of a dataset.
    Localize {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        /// Predictions: spans (iou), tags (wf1) or qgen output (bleu, rouge).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// References: dataset (iou) or tags (wf1).
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        judgments: Option<PathBuf>,
        /// Review-set size for agreement percentages.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Use radius w instead of w - 1 for windowed F1.
        #[arg(long)]
        full_radius: bool,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value = "L")]
        rouge: String,
        #[arg(long)]
        json: bool,
    },
    /// Draw the human-review set from a dataset.
    SampleReview {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = vlf_core::pipeline::DEFAULT_REVIEW_SIZE)]
        n: usize,
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
    /// Serve the review API and UI.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Built review UI bundle.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    commands::run(cli)
}
