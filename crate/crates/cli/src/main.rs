use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

#[derive(Parser, Debug)]
#[command(name = "hallueval", version, about = "Object hallucination metrics for image captions")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true, env = "HALLU_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output directory for report files.
    #[arg(long, global = true, env = "HALLU_OUT")]
    pub out: Option<PathBuf>,

    /// Also write a markdown table.
    #[arg(long, global = true)]
    pub md: bool,

    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CorpusArgs {
    /// COCO-format instances JSON.
    #[arg(long, env = "HALLU_CORPUS")]
    pub corpus: Option<PathBuf>,

    /// Restrict to the class names listed in this file.
    #[arg(long, env = "HALLU_CLASSES")]
    pub classes: Option<PathBuf>,

    /// Extra `class<TAB>synonym` lines.
    #[arg(long, env = "HALLU_SYNONYMS")]
    pub synonyms: Option<PathBuf>,

    /// Skip the bundled COCO synonym table.
    #[arg(long)]
    pub no_synonyms: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct MenArgs {
    #[arg(long, env = "HALLU_PREDS")]
    pub preds: Option<PathBuf>,
    #[arg(long, env = "HALLU_EMBED")]
    pub embed: Option<String>,
    #[arg(long, env = "HALLU_NP")]
    pub np: Option<String>,
    #[arg(long, env = "HALLU_CLASS_TEMPLATE")]
    pub class_template: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// CHAIR by string matching.
    Chair {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Captions, JSON Lines {image_id, caption}.
        #[arg(long, env = "HALLU_PREDS")]
        preds: Option<PathBuf>,
        /// Paired embeddings, JSON Lines {image_id, image, caption}.
        #[arg(long)]
        clip: Option<PathBuf>,
    },
    /// CHAIR with noun-phrase embedding matching.
    ChairMen {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        men: MenArgs,
        #[arg(long, env = "HALLU_T1")]
        t1: Option<f64>,
        #[arg(long, env = "HALLU_T2")]
        t2: Option<f64>,
        #[arg(long, env = "HALLU_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
    },
    /// Atomic-fact extraction and VQA verification.
    Faithscore {
        #[arg(long, env = "HALLU_PREDS")]
        preds: Option<PathBuf>,
        #[arg(long, env = "HALLU_CHAT")]
        chat: Option<String>,
        #[arg(long, env = "HALLU_VQA")]
        vqa: Option<String>,
        /// Extraction prompt with a {caption} slot; defaults to the bundled one.
        #[arg(long, env = "HALLU_PROMPT")]
        prompt: Option<PathBuf>,
        #[arg(long, env = "HALLU_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
    },
    /// Build a yes/no object-existence question set.
    PopeGen {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, env = "HALLU_STRATEGY")]
        strategy: Option<String>,
        #[arg(long, env = "HALLU_N")]
        n: Option<usize>,
        #[arg(long, env = "HALLU_SEED")]
        seed: Option<u64>,
        /// sum or max
        #[arg(long, env = "HALLU_AGGREGATION")]
        aggregation: Option<String>,
    },
    /// Score answers to a question set.
    PopeScore {
        #[arg(long)]
        set: PathBuf,
        /// JSON Lines {question_id, raw_text}.
        #[arg(long)]
        answers: PathBuf,
    },
    /// Referring-expression Precision@K.
    Refexp {
        /// JSON Lines {example_id, expression, gold, predicted_raw}.
        #[arg(long)]
        examples: PathBuf,
        #[arg(long, env = "HALLU_K")]
        k: Option<f64>,
        /// first-merged or best-of-all
        #[arg(long, env = "HALLU_EXTRACTION")]
        extraction: Option<String>,
    },
    /// Class frequencies and co-occurrence counts.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Sweep CHAIR-MEN thresholds against string-matching CHAIR.
    Calibrate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        men: MenArgs,
        /// `start:end:step` or comma list.
        #[arg(long)]
        t1_grid: Option<String>,
        #[arg(long)]
        t2_grid: Option<String>,
    },
    /// Per-metric differences `b - a` between two reports.
    Diff { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let core = err.chain().find_map(|e| e.downcast_ref::<hallueval::Error>());
            let (kind, code) = match core {
                Some(e) if e.is_provider_failure() => (e.kind(), 3),
                Some(e) => (e.kind(), 2),
                None => ("input", 2),
            };
            let msg = format!("{err:#}");
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": kind, "message": msg, "exit_code": code}})
            );
            ExitCode::from(code)
        }
    }
}
