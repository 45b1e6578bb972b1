mod records;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use clinsum::annotation::{load_dictionary, Annotators, Channel, I2b2Source};
use clinsum::augmentation::{augment_notes, toy_model, GeneratedPair, LabelId, TemplateSet};
use clinsum::config::PipelineConfig;
use clinsum::corpus::{build_pretrain_corpus, corpus_records, read_notes, CorpusWriter, ProgressNote};
use clinsum::dataset::{assemble_training_set, CompositionMode};
use clinsum::rouge::{evaluate_corpus, format_table, RougeOptions};
use clinsum::similarity::{embedder_by_name, idf_weights, score_and_filter, BertScoreScorer, PairScorer, TrigramScorer};
use clinsum::{Error, Result};

/// Clinical problem-list summarisation pipeline: masked pre-training
/// corpora, paraphrase augmentation, filtering, dataset assembly and ROUGE.
#[derive(Debug, Parser)]
#[command(name = "clinsum", version)]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// -v for info, -vv for debug (RUST_LOG takes precedence).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate, mask and write the pre-training corpus.
    BuildPretrain(BuildArgs),
    /// Generate paraphrases of assessment sentences.
    Augment(AugmentArgs),
    /// Score generated pairs and keep the best fraction.
    Filter(FilterArgs),
    /// Build the fine-tuning set from notes and kept pairs.
    Assemble(AssembleArgs),
    /// ROUGE-1/2/L of predictions against references.
    Evaluate(EvaluateArgs),
    /// Summary counts for a corpus file.
    Stats(StatsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildPretrain(_) => "build-pretrain",
            Command::Augment(_) => "augment",
            Command::Filter(_) => "filter",
            Command::Assemble(_) => "assemble",
            Command::Evaluate(_) => "evaluate",
            Command::Stats(_) => "stats",
        }
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Notes: a .jsonl file, a text file, or a directory of either.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    umls_dict: Option<PathBuf>,
    /// Term dictionary, or standoff annotations if the file ends in .tsv.
    #[arg(long)]
    i2b2_source: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write corpus statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    sentinel_format: Option<String>,
    #[arg(long)]
    p_umls: Option<f64>,
    #[arg(long)]
    p_sentence: Option<f64>,
    /// Minimum trigram similarity for a dictionary match.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Training notes (.jsonl with assessment and summary fields).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_out: Option<usize>,
    /// Sample among the k most likely tokens instead of greedy decoding.
    #[arg(long)]
    top_k: Option<usize>,
    /// Also generate for the 0.5 and 0 labels.
    #[arg(long)]
    all_labels: bool,
    /// Add-k smoothing of the built-in bigram model.
    #[arg(long, default_value_t = 0.05)]
    smoothing: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    keep: Option<f64>,
    /// onehot, hashed-random(<seed>) or file:<path>
    #[arg(long)]
    embedder: Option<String>,
    /// Comma-separated name=weight, e.g. bertscore=0.5,trigram=0.5
    #[arg(long)]
    weights: Option<String>,
    /// IDF-weight tokens, with document frequencies from the source sentences.
    #[arg(long)]
    idf: bool,
}

#[derive(Debug, Args)]
struct AssembleArgs {
    #[arg(long)]
    notes: Option<PathBuf>,
    #[arg(long)]
    augmented: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// a or aso
    #[arg(long)]
    mode: Option<CompositionMode>,
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long)]
    max_input_tokens: Option<usize>,
    /// Text before each appended section; {section} is its name.
    #[arg(long)]
    separator: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    stem: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    sentinel_format: Option<String>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::Template(_) => 1,
        Error::Io { .. } | Error::Parse { .. } | Error::Data(_) | Error::Format(_) => 2,
        Error::Backend(_) | Error::Internal(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clinsum {name}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    match cli.command {
        Command::BuildPretrain(args) => build_pretrain(cfg, args),
        Command::Augment(args) => augment(cfg, args),
        Command::Filter(args) => filter(cfg, args),
        Command::Assemble(args) => assemble(cfg, args),
        Command::Evaluate(args) => evaluate(args),
        Command::Stats(args) => stats(cfg, args),
    }
}

fn required(path: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("--{flag} (or paths.{key} in the config) is required")))
}

fn read_all_notes(path: &Path) -> Result<Vec<ProgressNote>> {
    read_notes(path)?.collect()
}

fn build_pretrain(mut cfg: PipelineConfig, args: BuildArgs) -> Result<()> {
    if let Some(p) = args.umls_dict {
        cfg.paths.umls_dict = Some(p);
    }
    if let Some(p) = args.i2b2_source {
        cfg.paths.i2b2_source = Some(p);
    }
    if let Some(p) = args.input {
        cfg.paths.notes = Some(p);
    }
    if let Some(f) = args.sentinel_format {
        cfg.masking.sentinel_format = f;
    }
    if let Some(p) = args.p_umls {
        cfg.set_p_umls(p);
    }
    if let Some(p) = args.p_sentence {
        cfg.masking.p_sentence = p;
    }
    if let Some(t) = args.threshold {
        cfg.annotation.threshold = t;
    }
    cfg.validate()?;
    let input = required(cfg.paths.notes.clone(), "input", "notes")?;
    let umls = required(cfg.paths.umls_dict.clone(), "umls-dict", "umls_dict")?;
    let i2b2 = required(cfg.paths.i2b2_source.clone(), "i2b2-source", "i2b2_source")?;

    let annotators = Annotators {
        umls: load_dictionary(&umls, Channel::Umls)?,
        i2b2: I2b2Source::load(&i2b2)?,
        config: cfg.annotation,
    };
    log::info!("UMLS dictionary: {} terms", annotators.umls.len());
    let mut writer = CorpusWriter::create(&args.out)?;
    let stats = build_pretrain_corpus(read_notes(&input)?, &annotators, &cfg.masking, cfg.workers, |ex| {
        writer.write(ex)
    })?;
    writer.finish()?;
    log::info!(
        "{} rows, {} without UMLS entities, {} without i2b2 entities, {} without either; {} masks; {} skipped",
        stats.total_rows,
        stats.rows_no_umls,
        stats.rows_no_i2b2,
        stats.rows_no_entities,
        stats.masks_total,
        stats.skipped_rows
    );
    if let Some(path) = args.stats {
        records::write_json(&path, &stats)?;
    }
    Ok(())
}

fn augment(mut cfg: PipelineConfig, args: AugmentArgs) -> Result<()> {
    if let Some(p) = args.train {
        cfg.paths.notes = Some(p);
    }
    if let Some(p) = args.templates {
        cfg.paths.templates = Some(p);
    }
    if let Some(l) = args.lambda {
        cfg.generation.lambda = l;
    }
    if let Some(n) = args.max_out {
        cfg.generation.max_output_tokens = n;
    }
    if args.top_k.is_some() {
        cfg.generation.top_k = args.top_k;
    }
    cfg.validate()?;
    if !(args.smoothing.is_finite() && args.smoothing >= 0.0) {
        return Err(Error::Config(format!("--smoothing must be non-negative, got {}", args.smoothing)));
    }
    let notes = read_all_notes(&required(cfg.paths.notes.clone(), "train", "notes")?)?;
    let templates = match &cfg.paths.templates {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::default(),
    };
    let labels: &[LabelId] = if args.all_labels { &LabelId::ALL } else { &[LabelId::SameThing] };
    let lm = toy_model(&notes, args.smoothing);
    let (pairs, stats) = augment_notes(&notes, &templates, &lm, &cfg.generation, labels)?;
    log::info!(
        "{} sentences from {} notes; {} generated, {} kept, {} missing required terms, {} empty",
        stats.sources,
        stats.notes,
        stats.generated,
        stats.kept,
        stats.rejected_missing_terms,
        stats.rejected_empty
    );
    records::write_jsonl(&args.out, &pairs)?;
    if let Some(path) = args.stats {
        records::write_json(&path, &stats)?;
    }
    Ok(())
}

fn parse_weights(spec: &str) -> Result<BTreeMap<String, f64>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (name, w) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("weight `{item}` is not name=value")))?;
            let w = w
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("weight `{item}`: {e}")))?;
            Ok((name.trim().to_string(), w))
        })
        .collect()
}

fn filter(mut cfg: PipelineConfig, args: FilterArgs) -> Result<()> {
    if let Some(k) = args.keep {
        cfg.filter.keep_fraction = k;
    }
    if let Some(e) = args.embedder {
        cfg.filter.embedder = e;
    }
    if let Some(w) = args.weights {
        cfg.filter.weights = parse_weights(&w)?;
    }
    cfg.filter.idf |= args.idf;
    cfg.validate()?;
    let pairs: Vec<GeneratedPair> = records::read_jsonl(&args.input)?;
    let idf = cfg
        .filter
        .idf
        .then(|| idf_weights(&pairs.iter().map(|p| p.source.as_str()).collect::<Vec<_>>()));
    let bert = BertScoreScorer {
        embedder: embedder_by_name(&cfg.filter.embedder)?,
        idf,
    };
    let scorers: [&dyn PairScorer; 2] = [&bert, &TrigramScorer];
    let total = pairs.len();
    let kept = score_and_filter(pairs, &scorers, &cfg.filter)?;
    log::info!("kept {} of {total} pairs", kept.len());
    records::write_jsonl(&args.out, &kept)
}

fn assemble(mut cfg: PipelineConfig, args: AssembleArgs) -> Result<()> {
    if let Some(p) = args.notes {
        cfg.paths.notes = Some(p);
    }
    if let Some(m) = args.mode {
        cfg.dataset.mode = m;
    }
    if let Some(n) = args.target_size {
        cfg.dataset.target_size = n;
    }
    if args.max_input_tokens.is_some() {
        cfg.dataset.max_input_tokens = args.max_input_tokens;
    }
    if let Some(s) = args.separator {
        cfg.dataset.separator = s;
    }
    cfg.validate()?;
    let notes = read_all_notes(&required(cfg.paths.notes.clone(), "notes", "notes")?)?;
    let pairs: Vec<GeneratedPair> = match &args.augmented {
        Some(path) => records::read_jsonl(path)?,
        None => Vec::new(),
    };
    let set = assemble_training_set(&notes, &pairs, &cfg.dataset)?;
    log::info!("{} instances", set.len());
    records::write_jsonl(&args.out, &set)
}

#[derive(Serialize)]
struct EvaluateReport {
    pairs: usize,
    #[serde(flatten)]
    score: clinsum::rouge::RougeScore,
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let preds = records::read_texts(&args.pred)?;
    let refs = records::read_texts(&args.reference)?;
    let score = evaluate_corpus(&preds, &refs, RougeOptions { stem: args.stem })?;
    if args.json {
        let report = EvaluateReport {
            pairs: preds.len(),
            score,
        };
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?);
    } else {
        print!("{}", format_table(&score));
    }
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct CorpusSummary {
    records: u64,
    masks_total: u64,
    records_without_masks: u64,
    mean_masks: f64,
    input_chars: u64,
    target_chars: u64,
}

fn stats(mut cfg: PipelineConfig, args: StatsArgs) -> Result<()> {
    if let Some(f) = args.sentinel_format {
        cfg.masking.sentinel_format = f;
    }
    cfg.validate()?;
    let format = cfg.masking.validate()?;
    let mut s = CorpusSummary::default();
    for ex in corpus_records(&args.corpus, format)? {
        let ex = ex?;
        s.records += 1;
        s.masks_total += ex.num_masks as u64;
        s.records_without_masks += u64::from(ex.num_masks == 0);
        s.input_chars += ex.input_text.chars().count() as u64;
        s.target_chars += ex.target_text.chars().count() as u64;
    }
    if s.records > 0 {
        s.mean_masks = s.masks_total as f64 / s.records as f64;
    }
    println!("{}", serde_json::to_string_pretty(&s).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(())
}
