//! `a2w`: corpus generation, training, decoding, attention analysis and
//! speech-word-vector tools.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2w::Error;

#[derive(Parser, Debug)]
#[command(name = "a2w", version, about = "Acoustic-to-word attention model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines; `#` starts a comment.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus tree.
    GenCorpus {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Corpus seed (key `corpus_seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Content words, excluding reserved tokens (key `vocab_size`).
        #[arg(long)]
        vocab_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; continues from DIR/checkpoint.a2wc with --resume.
    Train {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Epoch budget (key `epochs`).
        #[arg(long)]
        epochs: Option<usize>,
        /// Weight initialisation seed (key `init_seed`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Decode one split; writes hyp.txt, traces/ and decode.txt, prints WER.
    Decode {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Beam width (key `beam`, default 1).
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Word boundaries from attention peaks and their frame errors.
    AnalyzeAttn {
        /// Output directory of `decode`; repeat for several splits.
        #[arg(long = "decodes", value_name = "DIR", required = true)]
        decodes: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        alignments: PathBuf,
        /// Restrict everything to utterances decoded without errors.
        #[arg(long)]
        zero_wer_only: bool,
        /// Leave each utterance's final word out of the boundary files and
        /// the tolerance summary.
        #[arg(long)]
        drop_last_word: bool,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Extract speech-word-vectors from a split.
    Embed {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Nearest neighbours of one token per word type.
    Nn {
        #[arg(long, value_name = "FILE")]
        embeddings: PathBuf,
        /// Neighbours per query (key `k`, default 10).
        #[arg(long)]
        k: Option<usize>,
        /// cosine or euclidean (key `metric`).
        #[arg(long)]
        metric: Option<String>,
        /// Query words; defaults to every word type.
        #[arg(long = "word", value_name = "WORD")]
        words: Vec<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// 2-D projection of a random sample of vectors.
    Project {
        #[arg(long, value_name = "FILE")]
        embeddings: PathBuf,
        /// Sample size (key `sample`, default 300).
        #[arg(long)]
        sample: Option<usize>,
        /// pca or tsne (key `projection`).
        #[arg(long)]
        method: Option<String>,
        /// Sampling and t-SNE seed (keys `sample_seed`, `tsne_seed`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// 1 for usage and configuration, 3 for numeric failures, 2 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    if matches!(e, Error::Config(_)) {
        1
    } else if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
