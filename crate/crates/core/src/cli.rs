//! The `nmst` command line: train, generate, eval, verify and witness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, round_to_f32, save_checkpoint, DataRecord, ModelCheckpoint};
use crate::corpus::{make_examples, read_corpus, split_by_fractions, tokenize, TokenizerMode};
use crate::decoding::{decode as decode_one, DecoderKind, DecoderSpec};
use crate::error::{Error, Result};
use crate::eval::report::{write_json, write_jsonl, write_rnt_csv};
use crate::eval::{perplexity, run_campaign, CampaignConfig, GenerationRecord, DEFAULT_THRESHOLDS};
use crate::heads::{Head, HeadKind};
use crate::model::ConditionalModel;
use crate::net::{train, Architecture, CellKind, NeuralModel, TrainConfig};
use crate::verify::{build_vanilla_nontermination_witness, run_suite, SuiteResult};
use crate::vocab::{build_vocabulary, decode, encode_context, Context};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NMST_OUT_DIR";

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "nmst", version, about = "Train, decode and verify self-terminating sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a text corpus and write the best checkpoint.
    Train(TrainArgs),
    /// Decode one continuation per context line.
    Generate(GenerateArgs),
    /// Perplexity and non-termination ratios on a corpus.
    Eval(EvalArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Write the vanilla non-termination witness as a checkpoint.
    Witness(WitnessArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Optional JSON run configuration; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Separate validation corpus; without it the corpus is split.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Train/valid(/test) fractions, e.g. 0.8,0.1,0.1.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// char or word (default: char).
    #[arg(long)]
    pub tokenizer: Option<TokenizerMode>,
    /// va, st or nmst (default: nmst).
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// Epsilon in (0, 1); required for st and nmst, rejected for va.
    #[arg(long)]
    pub eps: Option<f64>,
    /// rnn or lstm.
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Use a separate output embedding table.
    #[arg(long)]
    pub untied: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Leading tokens of each line used as context (default: 10).
    #[arg(long)]
    pub context_length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $NMST_OUT_DIR, else ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One context per line, tokenized like the training corpus.
    #[arg(long)]
    pub contexts: PathBuf,
    /// greedy, top-k:K, nucleus:MU or beam:K.
    #[arg(long, default_value = "greedy")]
    pub decoder: String,
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON-lines output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated decoders.
    #[arg(long, value_delimiter = ',', default_value = "greedy")]
    pub decoders: Vec<String>,
    /// Thresholds L (default: 10, 100, ..., 100000 up to the cap).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use at most this many contexts.
    #[arg(long)]
    pub max_contexts: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteName {
    Heads,
    Decoders,
    Consistency,
    Remark21,
    All,
}

impl SuiteName {
    fn as_str(self) -> &'static str {
        match self {
            SuiteName::Heads => "heads",
            SuiteName::Decoders => "decoders",
            SuiteName::Consistency => "consistency",
            SuiteName::Remark21 => "remark21",
            SuiteName::All => "all",
        }
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WitnessArgs {
    #[arg(long, default_value_t = 3)]
    pub vocab_size: usize,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a training run needs. Stored next to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub tokenizer: TokenizerMode,
    pub split: Vec<f64>,
    pub head: HeadKind,
    pub epsilon: Option<f64>,
    pub architecture: Architecture,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub decoders: Vec<String>,
    pub thresholds: Vec<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            valid_corpus: None,
            tokenizer: TokenizerMode::Char,
            split: vec![0.8, 0.1, 0.1],
            head: HeadKind::Nmst,
            epsilon: None,
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            decoders: vec!["greedy".into()],
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    fn apply(&mut self, a: &TrainArgs) {
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if a.corpus.is_some() {
            self.corpus = a.corpus.clone();
        }
        if a.valid.is_some() {
            self.valid_corpus = a.valid.clone();
        }
        if a.eps.is_some() {
            self.epsilon = a.eps;
        }
        if a.out.is_some() {
            self.out_dir = a.out.clone();
        }
        if a.untied {
            self.architecture.tie_embeddings = false;
        }
        set!(self.split, a.split);
        set!(self.tokenizer, a.tokenizer);
        set!(self.head, a.head);
        set!(self.architecture.cell, a.cell);
        set!(self.architecture.layers, a.layers);
        set!(self.architecture.hidden, a.hidden);
        set!(self.train.learning_rate, a.lr);
        set!(self.train.weight_decay, a.weight_decay);
        set!(self.train.batch_size, a.batch_size);
        set!(self.train.max_epochs, a.max_epochs);
        set!(self.train.patience, a.patience);
        set!(self.train.dropout_prob, a.dropout);
        set!(self.train.context_length, a.context_length);
        set!(self.train.seed, a.seed);
    }

    fn validate(&self) -> Result<Head> {
        self.architecture.validate()?;
        self.train.validate()?;
        if self.corpus.is_none() {
            return Err(Error::Config("a corpus is required".into()));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.len() < 2 || (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!(
                "split {:?} must have at least two non-negative parts summing to 1",
                self.split
            )));
        }
        for d in &self.decoders {
            d.parse::<DecoderKind>()?;
        }
        Head::new(self.head, self.epsilon)
    }
}

fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    best_epoch: usize,
    best_valid_perplexity: f64,
    train_examples: usize,
    valid_examples: usize,
    vocab_size: usize,
    epochs: &'a [crate::net::EpochMetrics],
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    cfg.apply(a);
    let head = cfg.validate()?;
    let corpus = cfg.corpus.as_deref().expect("validated");
    let lines = read_corpus(corpus, cfg.tokenizer)?;
    let (train_lines, valid_lines) = match &cfg.valid_corpus {
        Some(v) => (lines, read_corpus(v, cfg.tokenizer)?),
        None => {
            let mut parts = split_by_fractions(&lines, &cfg.split)?.into_iter();
            (parts.next().unwrap_or_default(), parts.next().unwrap_or_default())
        }
    };
    let vocab = build_vocabulary(&train_lines, 1, true)?;
    let c = cfg.train.context_length;
    let train_ex = make_examples(&vocab, &train_lines, c)?;
    let valid_ex = make_examples(&vocab, &valid_lines, c)?;
    if train_ex.is_empty() || valid_ex.is_empty() {
        return Err(Error::Config(format!(
            "no lines longer than the context length {c} in the train or validation split"
        )));
    }
    let vocab_size = vocab.len();
    let model = NeuralModel::new(vocab, cfg.architecture, head, cfg.train.seed)?;
    let outcome = train(model, &train_ex, &valid_ex, &cfg.train)?;

    let dir = out_dir(cfg.out_dir.as_deref());
    std::fs::create_dir_all(&dir)?;
    let mut model = outcome.model;
    round_to_f32(&mut model);
    let ckpt = ModelCheckpoint {
        model,
        data: DataRecord {
            tokenizer: cfg.tokenizer,
            context_length: c,
        },
    };
    save_checkpoint(&dir.join("model.nmst"), &ckpt)?;
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        best_valid_perplexity: outcome.best_valid_perplexity,
        train_examples: train_ex.len(),
        valid_examples: valid_ex.len(),
        vocab_size,
        epochs: &outcome.metrics,
    };
    write_json(&dir.join("metrics.json"), &report)?;
    write_json(&dir.join("run_config.json"), &cfg)?;
    eprintln!(
        "best epoch {} valid perplexity {:.4}; wrote {}",
        outcome.best_epoch,
        outcome.best_valid_perplexity,
        dir.display()
    );
    Ok(())
}

fn read_contexts(path: &Path, ckpt: &ModelCheckpoint) -> Result<Vec<Context>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(|l| encode_context(ckpt.model.vocab(), &tokenize(l, ckpt.data.tokenizer)))
        .collect()
}

fn with_text(mut r: GenerationRecord, ckpt: &ModelCheckpoint) -> GenerationRecord {
    let v = ckpt.model.vocab();
    let seq = crate::vocab::Sequence::new(r.tokens.clone(), v.eos_id()).expect("decoded sequences are well formed");
    r.text = Some(decode(v, &seq));
    r
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let base = DecoderSpec::parse(&a.decoder, a.cap, a.seed)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let contexts = read_contexts(&a.contexts, &ckpt)?;
    let mut records = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        let spec = DecoderSpec::new(base.kind, a.cap, crate::eval::run_seed(a.seed, i, base.kind))?;
        let g = decode_one(&ckpt.model, ctx, &spec)?;
        records.push(with_text(GenerationRecord::from_generation(i, &spec, &g), &ckpt));
    }
    match &a.out {
        Some(p) => write_jsonl(p, &records)?,
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r)?);
            }
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let decoders = a
        .decoders
        .iter()
        .map(|d| d.parse::<DecoderKind>())
        .collect::<Result<Vec<_>>>()?;
    DecoderSpec::new(DecoderKind::Greedy, a.cap, 0)?;
    let thresholds = match &a.thresholds {
        Some(t) => t.clone(),
        None => DEFAULT_THRESHOLDS.iter().copied().filter(|&l| l <= a.cap).collect(),
    };
    if let Some(&t) = thresholds.iter().find(|&&t| t > a.cap) {
        return Err(Error::ThresholdAboveCap { threshold: t, cap: a.cap });
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let lines = read_corpus(&a.corpus, ckpt.data.tokenizer)?;
    let mut examples = make_examples(ckpt.model.vocab(), &lines, ckpt.data.context_length)?;
    if let Some(n) = a.max_contexts {
        examples.truncate(n);
    }
    if examples.is_empty() {
        return Err(Error::Config(format!(
            "no corpus lines longer than the context length {}",
            ckpt.data.context_length
        )));
    }
    let ppl = perplexity(&ckpt.model, &examples)?;
    let contexts: Vec<Context> = examples.iter().map(|e| e.context.clone()).collect();
    let model_id = a
        .checkpoint
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let mut campaign = run_campaign(
        &ckpt.model,
        &contexts,
        &CampaignConfig {
            model_id,
            decoders,
            cap: a.cap,
            master_seed: a.seed,
            thresholds,
        },
    )?;
    campaign.summary.perplexity = Some(ppl);

    let dir = out_dir(a.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    for r in &campaign.reports {
        let name = format!("generations_{}.jsonl", r.decoder.to_string().replace(':', "_"));
        let records: Vec<GenerationRecord> = r.records.iter().map(|x| with_text(x.clone(), &ckpt)).collect();
        write_jsonl(&dir.join(name), &records)?;
    }
    write_json(&dir.join("metrics.json"), &campaign.summary)?;
    write_rnt_csv(&dir.join("r_nt.csv"), &campaign.summary)?;
    println!("{}", serde_json::to_string_pretty(&campaign.summary)?);
    Ok(())
}

fn alpha_traces(r: &SuiteResult) -> serde_json::Value {
    let traces: serde_json::Map<String, serde_json::Value> = r
        .checks
        .iter()
        .filter_map(|c| {
            let d = c.data.as_ref()?;
            Some((d.get("head")?.as_str()?.to_string(), d.get("alpha_trace")?.clone()))
        })
        .collect();
    serde_json::Value::Object(traces)
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let result = run_suite(a.suite.as_str(), a.seed, a.trials)?;
    let dir = out_dir(a.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join(format!("verify_{}.json", a.suite.as_str())), &result)?;
    if matches!(a.suite, SuiteName::Remark21 | SuiteName::All) {
        write_json(&dir.join("alpha_traces.json"), &alpha_traces(&result))?;
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    for c in result.failures() {
        eprintln!("FAILED {}: {}", c.name, c.detail);
    }
    Ok(result.passed())
}

fn cmd_witness(a: &WitnessArgs) -> Result<()> {
    let w = build_vanilla_nontermination_witness(a.vocab_size)?;
    let mut model = w.model;
    round_to_f32(&mut model);
    save_checkpoint(
        &a.out,
        &ModelCheckpoint {
            model,
            data: DataRecord {
                tokenizer: TokenizerMode::Word,
                context_length: 0,
            },
        },
    )
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::DecoderSpec { .. } | Error::ThresholdAboveCap { .. }
    )
}

/// Runs a parsed command and maps the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Witness(a) => cmd_witness(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_usage_error(&e) { EXIT_USAGE } else { EXIT_CHECK_FAILED })
        }
    }
}
