use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "rlstm",
    version,
    about = "Knowledge-aware response selection with a Recall-gate LSTM"
)]
pub struct Cli {
    /// Worker threads; defaults to every available core. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// A `key = value` file providing defaults for the flags below.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an entity-attribute knowledge base from a domain and a general corpus.
    KbExtract(KbExtractArgs),
    /// Filter a conversation corpus by turn count and write train/valid/test samples.
    BuildDataset(BuildDatasetArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Compute accuracy and Recall@k of a checkpoint on grouped samples.
    Eval(EvalArgs),
    /// Write one score per sample.
    Score(ScoreArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct KbExtractArgs {
    /// Domain corpus, one document per line.
    pub domain: PathBuf,
    /// General corpus, one document per line.
    pub general: PathBuf,
    /// Output TSV.
    pub out: PathBuf,
    /// Co-occurrence window in tokens [default: 5]
    #[arg(long)]
    pub window: Option<usize>,
    /// Terms kept by the KL ranking [default: 1000]
    #[arg(long)]
    pub top_terms: Option<usize>,
    /// Pairs seen fewer times are dropped [default: 1]
    #[arg(long)]
    pub min_count: Option<u64>,
    /// word or char [default: word]
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Also write per-term statistics here.
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Conversation corpus, one `{"utterances": [...]}` record per line.
    pub corpus: PathBuf,
    /// Directory for train.jsonl, valid.jsonl, test.jsonl and turns.tsv.
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// [default: 3]
    #[arg(long)]
    pub min_turns: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    pub max_turns: Option<usize>,
    /// Share of conversations for validation [default: 0.1]
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    /// Share of conversations for test [default: 0.1]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// word or char [default: word]
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Skip malformed corpus lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training samples.
    pub samples: PathBuf,
    /// Validation samples; without it every tenth group of the training file is held out.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Knowledge base TSV, required by mlp_kb, lstm_kb and rlstm.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Pretrained word vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// mlp, mlp_kb, lstm, lstm_kb, affinity_rnn, affinity_lstm or rlstm [default: rlstm]
    #[arg(long)]
    pub model: Option<String>,
    /// ubuntu (300/200/200/200) or tieba (100/100/100/100) [default: tieba]
    #[arg(long)]
    pub dims_preset: Option<String>,
    /// Explicit word,sentence,knowledge,conversation sizes; overrides the preset.
    #[arg(long, value_name = "W,S,K,C")]
    pub dims: Option<String>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum epochs [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// sgd, momentum or adam [default: sgd]
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Attributes summed into the knowledge vector [default: 10]
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Utterance slots of the MLP models [default: 8]
    #[arg(long)]
    pub max_turns: Option<usize>,
    /// word or char [default: word]
    #[arg(long)]
    pub tokenizer: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Grouped samples: one positive with 1 or 9 negatives per group.
    pub samples: PathBuf,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Report file (key=value); a JSON copy goes to the same path plus `.json`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub checkpoint: PathBuf,
    pub samples: PathBuf,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// TSV of group, label and score; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// A model kind or `all` [default: rlstm]
    #[arg(long)]
    pub model: Option<String>,
    /// First seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Hidden size, at most 32; by default it cycles 1..=16 with the seed.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Sequence length, at most 8; by default it cycles 1..=5 with the seed.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Print every block.
    #[arg(long)]
    pub blocks: bool,
    /// Perturb this block of the analytic gradient (for testing the check itself).
    #[arg(long, hide = true)]
    pub corrupt_block: Option<String>,
}
