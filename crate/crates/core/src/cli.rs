//! Command-line wiring: flat key=value configuration with flag override
//! precedence, subcommand implementations and the exit-code contract
//! (0 success, 2 config error, 3 data error, 4 numeric failure).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    self, load_corpus, preprocess_corpus, unk_rate, DataError, DatasetProfile, Vocab,
};
use crate::decode::DecodeConfig;
use crate::metrics::{novel_ngrams, EmbeddingTable};
use crate::model::{
    load_checkpoint, save_checkpoint, train, ModelConfig, ModelError, Parameters, TrainConfig,
};
use crate::pipeline::{summarize_text, SummaryRecord};
use crate::report::{corpus_report, render_report, render_reference_table, EvalReport};
use crate::salience::{allocate_levels, sentence_salience_scores, DEFAULT_THRESHOLDS};
use crate::textcore::tokenize;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Errors carrying their process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            ModelError::BadConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<crate::metrics::MetricError> for CliError {
    fn from(e: crate::metrics::MetricError) -> Self {
        match e {
            crate::metrics::MetricError::Transport(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "season",
    about = "Salience-guided abstractive summarization toolkit",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Generate summaries from a checkpoint
    Summarize(SummarizeArgs),
    /// Emit per-sentence salience scores and degrees as JSON lines
    Salience(SalienceArgs),
    /// Score system outputs against references
    Evaluate(EvaluateArgs),
    /// Compare evaluation reports side by side
    Compare(CompareArgs),
    /// Render a stored report, or the bundled reference scores
    Report(ReportArgs),
    /// Run the oracle comparison suite
    SelfCheck,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Flat key=value config file; flags take precedence over file entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for anything randomized
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training corpus (JSON lines)
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Where to write the checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset profile: cnndm, samsum or edt
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub max_src: Option<usize>,
    #[arg(long)]
    pub max_tgt: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub vocab_cap: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub degrees: Option<usize>,
    #[arg(long)]
    pub lambda_sal: Option<f64>,
    /// Salience thresholds, comma separated
    #[arg(long)]
    pub thresholds: Option<String>,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input corpus (JSON lines; summaries may be empty)
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output JSON-lines file of {id, summary}
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub block_n: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Force greedy decoding
    #[arg(long)]
    pub greedy: bool,
}

#[derive(Args, Debug)]
pub struct SalienceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// System outputs (JSON lines of {id, summary})
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// Reference corpus (JSON lines of {id, document, summary})
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Embedding table for BERTScore/MoverScore columns
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Optional idf weights file
    #[arg(long)]
    pub idf: Option<PathBuf>,
    /// System name used in the report
    #[arg(long)]
    pub system: Option<String>,
    /// Write the report JSON here (stdout table either way)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Two or more report JSON files
    pub reports: Vec<PathBuf>,
    /// Flag hallucinated n-grams in these outputs...
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    /// ...against the documents in this corpus
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Report JSON to render; bundled reference scores when omitted
    pub report: Option<PathBuf>,
}

/// Merged configuration view: defaults, then config file, then flags.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: HashMap<String, String>,
}

const KNOWN_KEYS: [&str; 28] = [
    "alpha",
    "batch-size",
    "beam",
    "block-n",
    "checkpoint",
    "corpus",
    "d-model",
    "dec-layers",
    "degrees",
    "embeddings",
    "enc-layers",
    "epochs",
    "ffn-dim",
    "greedy",
    "idf",
    "lambda-sal",
    "lr",
    "max-len",
    "max-src",
    "max-tgt",
    "n-heads",
    "output",
    "outputs",
    "profile",
    "seed",
    "system",
    "temperature",
    "vocab-cap",
];

impl RunConfig {
    /// Parses a flat `key=value` file. Unknown keys, missing separators and
    /// duplicate keys are config errors.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("could not read {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) && key != "thresholds" {
                return Err(CliError::Config(format!(
                    "{}:{}: unknown key {key:?}",
                    path.display(),
                    idx + 1
                )));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    idx + 1
                )));
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(common: &CommonArgs) -> Result<Self, CliError> {
        match &common.config {
            Some(path) => Self::from_file(path),
            None => Ok(RunConfig::default()),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!("config key {key:?} has invalid value {raw:?}"))
            }),
        }
    }

    /// Flag value wins, then file entry, then the default.
    fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: &Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v.clone());
        }
        Ok(self.get::<T>(key)?.unwrap_or(default))
    }

    fn resolve_opt<T: std::str::FromStr + Clone>(
        &self,
        flag: &Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        if let Some(v) = flag {
            return Ok(Some(v.clone()));
        }
        self.get::<T>(key)
    }
}

fn require_path(value: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let path = value.ok_or_else(|| CliError::Config(format!("missing required {what}")))?;
    if !path.exists() {
        return Err(CliError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn parse_thresholds(raw: Option<String>) -> Result<Vec<f64>, CliError> {
    match raw {
        None => Ok(DEFAULT_THRESHOLDS.to_vec()),
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("bad threshold {p:?}")))
            })
            .collect(),
    }
}

fn profile_from(
    cfg: &RunConfig,
    profile: &Option<String>,
    max_src: &Option<usize>,
    max_tgt: &Option<usize>,
    default: DatasetProfile,
) -> Result<DatasetProfile, CliError> {
    let name = cfg.resolve_opt::<String>(profile, "profile")?;
    let mut chosen = match name.as_deref() {
        None => default,
        Some(n) => DatasetProfile::by_name(n).map_err(|e| CliError::Config(e.to_string()))?,
    };
    if let Some(src) = cfg.resolve_opt::<usize>(max_src, "max-src")? {
        chosen.max_src_tokens = src;
        chosen.name = "custom".into();
    }
    if let Some(tgt) = cfg.resolve_opt::<usize>(max_tgt, "max-tgt")? {
        chosen.max_tgt_tokens = tgt;
        chosen.name = "custom".into();
    }
    Ok(chosen)
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::Data(format!("could not write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.common)?;
    let corpus_path = require_path(
        cfg.resolve_opt(&args.corpus, "corpus")?,
        "corpus path (--corpus)",
    )?;
    let checkpoint_path: PathBuf = cfg
        .resolve_opt(&args.checkpoint, "checkpoint")?
        .ok_or_else(|| CliError::Config("missing required checkpoint path (--checkpoint)".into()))?;
    let profile = profile_from(
        &cfg,
        &args.profile,
        &args.max_src,
        &args.max_tgt,
        DatasetProfile::custom(64, 24),
    )?;
    let thresholds = parse_thresholds(cfg.resolve_opt(&args.thresholds, "thresholds")?)?;

    let corpus = load_corpus(&corpus_path)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!(
            "corpus {} has no examples",
            corpus_path.display()
        )));
    }
    let vocab_cap = cfg.resolve(&args.vocab_cap, "vocab-cap", 8000usize)?;
    let vocab = Vocab::build(&corpus, vocab_cap)?;

    let model_config = ModelConfig {
        d_model: cfg.resolve(&args.d_model, "d-model", 64)?,
        n_heads: cfg.resolve(&args.n_heads, "n-heads", 2)?,
        enc_layers: cfg.resolve(&args.enc_layers, "enc-layers", 2)?,
        dec_layers: cfg.resolve(&args.dec_layers, "dec-layers", 2)?,
        ffn_dim: cfg.resolve(&args.ffn_dim, "ffn-dim", 128)?,
        vocab_size: vocab.len(),
        degrees: cfg.resolve(&args.degrees, "degrees", thresholds.len() + 1)?,
        lambda_sal: cfg.resolve(&args.lambda_sal, "lambda-sal", 0.5)?,
        max_src_len: profile.max_src_tokens,
        max_tgt_len: profile.max_tgt_tokens,
        seed: cfg.resolve(&args.common.seed, "seed", 0)?,
    };
    model_config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if model_config.degrees != thresholds.len() + 1 {
        return Err(CliError::Config(format!(
            "{} thresholds imply {} degrees, config says {}",
            thresholds.len(),
            thresholds.len() + 1,
            model_config.degrees
        )));
    }

    let prepared = preprocess_corpus(&corpus, &profile, &vocab, &thresholds)?;
    println!(
        "prepared {} examples (profile {}, vocab {}, unk rate {:.4})",
        prepared.len(),
        profile.name,
        vocab.len(),
        unk_rate(&prepared)
    );

    let train_config = TrainConfig {
        epochs: cfg.resolve(&args.epochs, "epochs", 5)?,
        learning_rate: cfg.resolve(&args.lr, "lr", 1e-3)?,
        batch_size: cfg.resolve(&args.batch_size, "batch-size", 8)?,
    };
    let mut params =
        Parameters::init(&model_config).map_err(|e| CliError::Config(e.to_string()))?;
    let log = train(&mut params, &prepared, &train_config)?;
    for entry in &log {
        println!(
            "epoch {}/{}: nll {:.6} sal_ce {:.6} total {:.6}",
            entry.epoch, train_config.epochs, entry.nll, entry.sal_ce, entry.total
        );
    }
    save_checkpoint(&checkpoint_path, &params, &vocab)?;
    println!("checkpoint written to {}", checkpoint_path.display());
    Ok(())
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.common)?;
    let checkpoint_path = require_path(
        cfg.resolve_opt(&args.checkpoint, "checkpoint")?,
        "checkpoint path (--checkpoint)",
    )?;
    let corpus_path = require_path(
        cfg.resolve_opt(&args.corpus, "corpus")?,
        "corpus path (--corpus)",
    )?;
    let output_path = cfg.resolve_opt(&args.output, "output")?;

    let (params, vocab) = load_checkpoint(&checkpoint_path)?;
    let decode = DecodeConfig {
        beam_width: cfg.resolve(&args.beam, "beam", 5)?,
        alpha: cfg.resolve(&args.alpha, "alpha", 1.5)?,
        block_n: cfg.resolve(&args.block_n, "block-n", 3)?,
        max_len: cfg.resolve(&args.max_len, "max-len", params.config.max_tgt_len)?,
        temperature: cfg.resolve(&args.temperature, "temperature", 0.5)?,
    };
    decode.validate().map_err(CliError::Config)?;
    let use_greedy = args.greedy || cfg.get::<bool>("greedy")?.unwrap_or(false);

    let corpus = load_corpus(&corpus_path)?;
    let profile = DatasetProfile::custom(params.config.max_src_len, params.config.max_tgt_len);
    let thresholds = default_thresholds_for(params.config.degrees);
    let prepared = preprocess_corpus(&corpus, &profile, &vocab, &thresholds)?;

    let mut out = String::new();
    for ex in &prepared {
        let record = summarize_text(&params, &vocab, ex, &decode, use_greedy)?;
        out.push_str(&serde_json::to_string(&record).expect("serializable record"));
        out.push('\n');
    }
    write_or_print(&output_path, &out)
}

/// Evenly spaced fallback cut points when only a degree count is known.
fn default_thresholds_for(degrees: usize) -> Vec<f64> {
    if degrees == DEFAULT_THRESHOLDS.len() + 1 {
        return DEFAULT_THRESHOLDS.to_vec();
    }
    (1..degrees).map(|i| i as f64 / degrees as f64).collect()
}

pub fn cmd_salience(args: &SalienceArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.common)?;
    let corpus_path = require_path(
        cfg.resolve_opt(&args.corpus, "corpus")?,
        "corpus path (--corpus)",
    )?;
    let output_path = cfg.resolve_opt(&args.output, "output")?;
    let thresholds = parse_thresholds(cfg.resolve_opt(&args.thresholds, "thresholds")?)?;

    #[derive(serde::Serialize)]
    struct SalienceRecord {
        id: String,
        scores: Vec<f64>,
        levels: Vec<usize>,
    }

    let corpus = load_corpus(&corpus_path)?;
    let mut out = String::new();
    for ex in &corpus {
        let sentences = data::document_sentences(&ex.document);
        if sentences.is_empty() {
            return Err(CliError::Data(format!(
                "example {:?}: document has no sentences",
                ex.id
            )));
        }
        let reference = tokenize(&ex.summary);
        let scores = if reference.is_empty() {
            vec![0.0; sentences.len()]
        } else {
            sentence_salience_scores(&sentences, &reference)
                .map_err(|e| CliError::Data(e.to_string()))?
        };
        let levels =
            allocate_levels(&scores, &thresholds).map_err(|e| CliError::Config(e.to_string()))?;
        let record = SalienceRecord {
            id: ex.id.clone(),
            scores,
            levels,
        };
        out.push_str(&serde_json::to_string(&record).expect("serializable record"));
        out.push('\n');
    }
    write_or_print(&output_path, &out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.common)?;
    let outputs_path = require_path(
        cfg.resolve_opt(&args.outputs, "outputs")?,
        "outputs path (--outputs)",
    )?;
    let corpus_path = require_path(
        cfg.resolve_opt(&args.corpus, "corpus")?,
        "corpus path (--corpus)",
    )?;
    let embeddings_path = cfg.resolve_opt(&args.embeddings, "embeddings")?;
    let idf_path = cfg.resolve_opt(&args.idf, "idf")?;
    let system = cfg.resolve(&args.system, "system", "system".to_string())?;

    let outputs = load_summary_records(&outputs_path)?;
    let corpus = load_corpus(&corpus_path)?;

    let output_ids: Vec<&str> = outputs.iter().map(|r| r.id.as_str()).collect();
    let corpus_ids: Vec<&str> = corpus.iter().map(|e| e.id.as_str()).collect();
    let missing: Vec<&str> = corpus_ids
        .iter()
        .filter(|id| !output_ids.contains(id))
        .copied()
        .collect();
    let extra: Vec<&str> = output_ids
        .iter()
        .filter(|id| !corpus_ids.contains(id))
        .copied()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::Data(format!(
            "output/reference id mismatch: missing {missing:?}, unexpected {extra:?}"
        )));
    }

    let emb = match embeddings_path {
        Some(path) => {
            let path = require_path(Some(path), "embedding file (--embeddings)")?;
            let mut table = EmbeddingTable::load(&path)?;
            if let Some(idf) = idf_path {
                let idf = require_path(Some(idf), "idf file (--idf)")?;
                table.load_idf(&idf)?;
            }
            Some(table)
        }
        None => {
            eprintln!("warning: no embedding file; skipping BERTScore and MoverScore columns");
            None
        }
    };
    let use_idf = emb.is_some() && idf_path_was_given(&args.idf, &cfg)?;

    let by_id: HashMap<&str, &str> = outputs
        .iter()
        .map(|r| (r.id.as_str(), r.summary.as_str()))
        .collect();
    let pairs: Vec<(String, String)> = corpus
        .iter()
        .map(|ex| (by_id[ex.id.as_str()].to_string(), ex.summary.clone()))
        .collect();

    let report = corpus_report(&system, &pairs, emb.as_ref(), use_idf)?;
    let rendered = render_report(&report).map_err(CliError::Data)?;
    print!("{rendered}");
    if let Some(path) = cfg.resolve_opt(&args.output, "output")? {
        let json = serde_json::to_string_pretty(&report).expect("serializable report");
        std::fs::write(&path, json + "\n")
            .map_err(|e| CliError::Data(format!("could not write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn idf_path_was_given(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<bool, CliError> {
    Ok(flag.is_some() || cfg.get::<PathBuf>("idf")?.is_some())
}

fn load_summary_records(path: &Path) -> Result<Vec<SummaryRecord>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("could not read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SummaryRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", path.display(), idx + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.common)?;
    if args.reports.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two report files".into(),
        ));
    }
    let mut reports = Vec::new();
    for path in &args.reports {
        let path = require_path(Some(path.clone()), "report file")?;
        let content = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("could not read {}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&content)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        report.validate().map_err(CliError::Data)?;
        reports.push(report);
    }
    let merged = EvalReport::merge(reports).map_err(CliError::Data)?;
    let rendered = render_report(&merged).map_err(CliError::Data)?;
    print!("{rendered}");

    let outputs_path = cfg.resolve_opt(&args.outputs, "outputs")?;
    let corpus_path = cfg.resolve_opt(&args.corpus, "corpus")?;
    match (outputs_path, corpus_path) {
        (Some(outputs), Some(corpus)) => {
            let outputs = load_summary_records(&require_path(Some(outputs), "outputs file")?)?;
            let corpus = load_corpus(require_path(Some(corpus), "corpus file")?)?;
            print!("{}", render_hallucinations(&outputs, &corpus)?);
            Ok(())
        }
        (None, None) => Ok(()),
        _ => Err(CliError::Config(
            "hallucination flagging needs both --outputs and --corpus".into(),
        )),
    }
}

/// Bracket novel unigrams in the summary text and list novel 2- and
/// 3-grams, per example.
fn render_hallucinations(
    outputs: &[SummaryRecord],
    corpus: &[data::Example],
) -> Result<String, CliError> {
    let docs: HashMap<&str, &str> = corpus
        .iter()
        .map(|e| (e.id.as_str(), e.document.as_str()))
        .collect();
    let mut out = String::from("\nhallucination flags (novel vs source):\n");
    for record in outputs {
        let Some(document) = docs.get(record.id.as_str()) else {
            return Err(CliError::Data(format!(
                "output id {:?} missing from corpus",
                record.id
            )));
        };
        let source = tokenize(document);
        let summary = tokenize(&record.summary);
        let novel1 = novel_ngrams(&summary, &source, 1);
        let marked: Vec<String> = summary
            .tokens()
            .iter()
            .map(|t| {
                if novel1.contains(&vec![t.clone()]) {
                    format!("[{t}]")
                } else {
                    t.clone()
                }
            })
            .collect();
        out.push_str(&format!("{}: {}\n", record.id, marked.join(" ")));
        for n in [2usize, 3] {
            let mut grams: Vec<String> = novel_ngrams(&summary, &source, n)
                .into_iter()
                .map(|g| g.join(" "))
                .collect();
            grams.sort();
            if !grams.is_empty() {
                out.push_str(&format!("  novel {n}-grams: {}\n", grams.join(" | ")));
            }
        }
    }
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    match &args.report {
        None => {
            print!("{}", render_reference_table());
            Ok(())
        }
        Some(path) => {
            let path = require_path(Some(path.clone()), "report file")?;
            let content = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("could not read {}: {e}", path.display())))?;
            let report: EvalReport = serde_json::from_str(&content)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            report.validate().map_err(CliError::Data)?;
            print!("{}", render_report(&report).map_err(CliError::Data)?);
            Ok(())
        }
    }
}

pub fn cmd_self_check() -> Result<(), CliError> {
    let results = crate::oracles::self_check();
    let mut all_passed = true;
    for check in &results {
        let status = if check.passed { "ok" } else { "FAIL" };
        println!("{:<26} {} ({})", check.name, status, check.detail);
        all_passed &= check.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Numeric("oracle self-check failed".into()))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Salience(args) => cmd_salience(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Report(args) => cmd_report(args),
        Command::SelfCheck => cmd_self_check(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "beam=5\nnot-a-key=1\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("not-a-key"));
    }

    #[test]
    fn config_file_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "beam=7\nalpha=2.0\n# comment\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        // Flag wins over file.
        assert_eq!(cfg.resolve(&Some(3usize), "beam", 5).unwrap(), 3);
        // File wins over default.
        assert_eq!(cfg.resolve(&None::<usize>, "beam", 5).unwrap(), 7);
        // Default when absent everywhere.
        assert_eq!(cfg.resolve(&None::<usize>, "max-len", 64).unwrap(), 64);
    }

    #[test]
    fn config_file_rejects_duplicates_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "beam=5\nbeam=6\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        std::fs::write(&path, "beam 5\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 4);
    }
}
