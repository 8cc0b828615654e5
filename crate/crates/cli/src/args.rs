use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "vnel", version, about = "Visual named entity linking toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic knowledge base, images and mention manifest.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Split a manifest into train/dev/test.
    #[command(args_override_self = true)]
    Split(SplitArgs),
    /// Apply the construction filter to candidate image/caption records.
    #[command(args_override_self = true)]
    Filter(FilterArgs),
    /// Write raw encoder embeddings of entities and, optionally, mentions.
    #[command(args_override_self = true)]
    Embed(EmbedArgs),
    /// Build an entity index (a model directory) for one sub-task.
    #[command(args_override_self = true)]
    Index(IndexArgs),
    /// Fine-tune adapter heads with the in-batch contrastive loss.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Link every mention of a manifest against one or two model directories.
    #[command(args_override_self = true)]
    Link(LinkArgs),
    /// Score link results against gold labels.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// R@1 of the recall-then-rerank cascade over a list of rerank lengths.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Top-k overlap between two link result files.
    #[command(args_override_self = true)]
    Overlap(OverlapArgs),
    /// Dataset statistics.
    #[command(args_override_self = true)]
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat JSON or key=value file; explicit flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    V2v,
    V2t,
    V2vt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TextModeArg {
    #[value(name = "name")]
    #[serde(rename = "name")]
    Name,
    #[value(name = "name_desc")]
    #[serde(rename = "name_desc")]
    NameDesc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendArg {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MentionModeArg {
    #[value(name = "crop")]
    #[serde(rename = "crop")]
    Crop,
    #[value(name = "whole_image")]
    #[serde(rename = "whole_image")]
    WholeImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NerArg {
    /// Two consecutive capitalized words.
    Bigram,
    /// Entity names from --kb.
    Gazetteer,
}

fn parse_encoder(s: &str) -> Result<String, String> {
    match s.strip_prefix("plugin:") {
        _ if s == "stub" => Ok(s.to_string()),
        Some(id) if !id.is_empty() => Ok(s.to_string()),
        _ => Err("expected `stub` or `plugin:<id>`".into()),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub entities: usize,
    #[arg(long, default_value_t = 256)]
    pub images: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Separability of the visual channel, in [0, 1].
    #[arg(long, default_value_t = 0.6)]
    pub separability: f64,
    /// Separability of the image-text channel [default: --separability].
    #[arg(long)]
    pub text_separability: Option<f64>,
    /// Make the visual and textual hard sets disjoint.
    #[arg(long, default_value_t = false)]
    pub complementary: bool,
    #[arg(long, default_value_t = 0.08)]
    pub multi_mention_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub zipf_exponent: f64,
    #[arg(long, default_value_t = 0.6)]
    pub noise_sigma: f64,
    /// Give entities no image (text-only knowledge base).
    #[arg(long, default_value_t = false)]
    pub no_entity_images: bool,
    #[arg(long, value_enum, default_value_t = TextModeArg::NameDesc)]
    pub text_mode: TextModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub mentions: PathBuf,
    /// Train, dev and test ratios.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow gold entities to repeat inside the test split.
    #[arg(long, default_value_t = false)]
    pub no_test_unique: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FilterArgs {
    /// JSONL of {"image", "caption"}; images resolve against its directory.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum, default_value_t = NerArg::Bigram)]
    pub ner: NerArg,
    /// Knowledge base supplying names for the gazetteer.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Brightness a pixel needs to count towards a face blob.
    #[arg(long, default_value_t = 250)]
    pub face_threshold: u8,
    #[arg(long, default_value_t = 4)]
    pub face_min_area: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

/// Everything needed to rebuild an encoding pipeline.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EncoderArgs {
    #[arg(long, value_enum, default_value_t = Subtask::V2v)]
    pub subtask: Subtask,
    /// `stub` or `plugin:<id>`.
    #[arg(long, default_value = "stub", value_parser = parse_encoder)]
    pub encoder: String,
    /// Seeds the stub encoders; use the seed given to `synth`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = TextModeArg::NameDesc)]
    pub text_mode: TextModeArg,
    /// Mention region [default: crop for v2v, whole_image for v2t].
    #[arg(long, value_enum)]
    pub mention_mode: Option<MentionModeArg>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub mentions: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, value_enum, default_value_t = BackendArg::Exact)]
    pub backend: BackendArg,
    /// Directory with trained heads (output of `train`).
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Reuse raw entity embeddings written by `embed`.
    #[arg(long)]
    pub entity_embeddings: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// Training manifest with gold labels.
    #[arg(long)]
    pub mentions: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// [default: 2e-4 for v2v, 2e-6 for v2t]
    #[arg(long)]
    pub lr_mention: Option<f64>,
    /// [default: 2e-4 for v2v, 2e-6 for v2t]
    #[arg(long)]
    pub lr_entity: Option<f64>,
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1024)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Standard deviation of the first-layer initialization.
    #[arg(long, default_value_t = 0.01)]
    pub w1_std: f32,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LinkArgs {
    #[arg(long)]
    pub mentions: PathBuf,
    #[arg(long, value_enum, default_value_t = Subtask::V2v)]
    pub subtask: Subtask,
    /// Model directory for v2v or v2t.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Recall model directory for v2vt.
    #[arg(long)]
    pub recall_model: Option<PathBuf>,
    /// Rerank model directory for v2vt.
    #[arg(long)]
    pub rerank_model: Option<PathBuf>,
    /// Rerank length K for v2vt.
    #[arg(long, default_value_t = vnel::linker::DEFAULT_RERANK_LENGTH)]
    pub rerank_k: usize,
    /// Candidates kept per mention.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Link results (JSONL).
    #[arg(long)]
    pub links: PathBuf,
    /// Manifest with gold labels.
    #[arg(long)]
    pub mentions: PathBuf,
    /// Model directory whose excluded entities are reported.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub mentions: PathBuf,
    #[arg(long)]
    pub recall_model: PathBuf,
    #[arg(long)]
    pub rerank_model: PathBuf,
    /// Rerank lengths, ascending; `full` is the recall index size.
    #[arg(long, default_value = "1,5,20,full")]
    pub k: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OverlapArgs {
    #[arg(long)]
    pub links_a: PathBuf,
    #[arg(long)]
    pub links_b: PathBuf,
    #[arg(long, default_value = "1,5,10")]
    pub k: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub mentions: PathBuf,
    #[arg(long)]
    pub kb: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Synth(a) => &a.common,
            Command::Split(a) => &a.common,
            Command::Filter(a) => &a.common,
            Command::Embed(a) => &a.common,
            Command::Index(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Link(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Overlap(a) => &a.common,
            Command::Stats(a) => &a.common,
        }
    }
}
