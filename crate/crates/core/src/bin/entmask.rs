//! Command-line interface for the masking pipeline and evaluation harness.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use entmask::corpus::{
    data_stats, load_corpus, load_ontology, ontology_coverage, read_corpus_jsonl,
    write_corpus_jsonl_file, Split,
};
use entmask::entity::{write_entity_set, EntitySourceKind};
use entmask::metrics::{
    classify_mismatches, align, evaluate, load_slot_schema, read_predictions, DomainScope,
    MismatchCounts,
};
use entmask::pipeline::{
    extract_entities, run_pipeline, sweep, validate_config, write_json, Overrides,
};
use entmask::skm::{emit_corpus, file_stats, read_masked_jsonl, MaskingConfig};
use entmask::tokenizer::{load_vocabulary, InstanceLayout, InstanceOptions};

#[derive(Parser)]
#[command(
    name = "entmask",
    version,
    about = "Entity-adaptive masking pipeline and DST evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a TRADE-preprocessed MultiWOZ split into internal JSONL
    Ingest(IngestArgs),
    /// Build word/phrase entity sets from the configured sources
    ExtractEntities(ExtractArgs),
    /// Emit a masked JSONL corpus
    Mask(MaskArgs),
    /// Print realized masking statistics for an emitted corpus
    Stats(StatsArgs),
    /// Score a prediction file: JGA, SA, RSA, mismatch taxonomy
    Evaluate(EvaluateArgs),
    /// Emit a CSV of mismatch counts for one or more models
    MismatchReport(MismatchReportArgs),
    /// Run the full pipeline from a config file and write a manifest
    Run(RunArgs),
    /// Emit one corpus per select probability and a sweep summary
    Sweep(SweepArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// TRADE-format split file (e.g. train_dials.json)
    #[arg(long)]
    corpus: PathBuf,
    /// Split name: train, dev, or test
    #[arg(long)]
    split: Split,
    /// Output path for the normalized corpus JSONL
    #[arg(long)]
    out: PathBuf,
    /// Optional ontology for a value-coverage report
    #[arg(long)]
    ontology: Option<PathBuf>,
    /// Where to write the ingestion stats report (JSON); stdout when omitted
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Normalized corpus JSONL (from `ingest`)
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Comma-separated sources: ontology,spacy_file,ner_file,flair_file,gazetteer
    #[arg(long, value_delimiter = ',', default_value = "ontology,gazetteer")]
    sources: Vec<EntitySourceKind>,
    #[arg(long)]
    spacy_spans: Option<PathBuf>,
    #[arg(long)]
    ner_spans: Option<PathBuf>,
    #[arg(long)]
    flair_spans: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Normalized corpus JSONL (from `ingest`)
    #[arg(long)]
    corpus: PathBuf,
    /// Entity set JSON (from `extract-entities`)
    #[arg(long)]
    entities: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    p_select: f64,
    #[arg(long, default_value_t = 0.2)]
    p_origin: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Instance layout: turn-pair or dialogue
    #[arg(long, default_value = "turn-pair")]
    layout: InstanceLayout,
    /// Skip turns whose system utterance is empty
    #[arg(long)]
    skip_empty_system: bool,
    #[arg(long, default_value_t = 256)]
    max_tokens: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Masked corpus JSONL
    masked: PathBuf,
    /// Emit JSON instead of the table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold corpus JSONL (from `ingest`)
    #[arg(long)]
    gold: PathBuf,
    /// Prediction JSONL
    #[arg(long)]
    pred: PathBuf,
    /// Slot schema JSON
    #[arg(long)]
    schema: PathBuf,
    /// Per-domain slice convention: state-filtered or dialogue-level
    #[arg(long, default_value = "state-filtered")]
    domain_scope: DomainScope,
    /// Report output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MismatchReportArgs {
    /// Gold corpus JSONL
    #[arg(long)]
    gold: PathBuf,
    /// Prediction files as LABEL=PATH, repeatable
    #[arg(long = "pred", value_parser = parse_labeled_path, required = true)]
    preds: Vec<(String, PathBuf)>,
    /// CSV output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file (TOML)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    p_select: Option<f64>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated select probabilities
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5,0.6,0.7")]
    p_select: Vec<f64>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    p_origin: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layout: Option<InstanceLayout>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated entity sources
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<EntitySourceKind>>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            p_select: self.p_select,
            p_origin: self.p_origin,
            seed: self.seed,
            layout: self.layout,
            output_dir: self.output_dir,
            sources: self.sources,
            include_empty_system: None,
            max_tokens: self.max_tokens,
        }
    }
}

fn parse_labeled_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=PATH, got `{s}`"))?;
    if label.is_empty() {
        return Err(format!("empty label in `{s}`"));
    }
    Ok((label.to_string(), PathBuf::from(path)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.to_string(),
                "chain": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::ExtractEntities(args) => cmd_extract(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::MismatchReport(args) => cmd_mismatch_report(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let loaded = load_corpus(&args.corpus, args.split)?;
    print_warnings(&loaded.warnings);
    write_corpus_jsonl_file(&loaded.dialogues, &args.out)?;
    let stats = data_stats(&loaded);
    let mut report = serde_json::to_value(&stats)?;
    if let Some(path) = &args.ontology {
        let ontology = load_ontology(path)?;
        let coverage = ontology_coverage(&loaded.dialogues, &ontology);
        report["ontology_coverage"] = serde_json::to_value(&coverage)?;
    }
    match &args.stats_out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if !stats.matches_reference {
        eprintln!(
            "warning: per-domain dialogue counts deviate from the published table: {:?}",
            stats.deltas
        );
    }
    eprintln!(
        "wrote {} dialogues ({} turns) to {}",
        stats.total_dialogues,
        stats.total_turns,
        args.out.display()
    );
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let dialogues = read_corpus_jsonl(&args.corpus)?;
    let ontology = load_ontology(&args.ontology)?;
    let vocab = load_vocabulary(&args.vocab)?;
    let filter = entmask::entity::FilterConfig::default();
    let extraction = extract_entities(
        &dialogues,
        &ontology,
        &vocab,
        &filter,
        &args.sources,
        args.spacy_spans.as_deref(),
        args.ner_spans.as_deref(),
        args.flair_spans.as_deref(),
    )?;
    print_warnings(&extraction.warnings);
    write_entity_set(&extraction.set, &args.out)?;
    eprintln!(
        "wrote {} word and {} phrase entities to {}",
        extraction.set.word_count(),
        extraction.set.phrase_count(),
        args.out.display()
    );
    for (source, (words, phrases)) in &extraction.per_source {
        eprintln!("  {source}: {words} words, {phrases} phrases");
    }
    Ok(())
}

fn cmd_mask(args: MaskArgs) -> Result<()> {
    let dialogues = read_corpus_jsonl(&args.corpus)?;
    let entities = entmask::entity::read_entity_set(&args.entities)?;
    let vocab = load_vocabulary(&args.vocab)?;
    let cfg = MaskingConfig {
        prob_select: args.p_select,
        prob_origin: args.p_origin,
        seed: args.seed,
        ..Default::default()
    };
    let opts = InstanceOptions {
        layout: args.layout,
        include_empty_system: !args.skip_empty_system,
        max_tokens: args.max_tokens,
    };
    let stats = emit_corpus(&dialogues, &entities, &cfg, &vocab, &opts, &args.out)?;
    eprintln!(
        "wrote {} instances to {}",
        stats.instances,
        args.out.display()
    );
    print_stats_table(&serde_json::to_value(&stats)?);
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let examples = read_masked_jsonl(&args.masked)?;
    let stats = file_stats(&examples);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print_stats_table(&serde_json::to_value(&stats)?);
    }
    Ok(())
}

fn print_stats_table(stats: &serde_json::Value) {
    let Some(map) = stats.as_object() else {
        return;
    };
    println!("{:<28} value", "statistic");
    println!("{}", "-".repeat(40));
    for (key, value) in map {
        match value {
            serde_json::Value::Number(n) if n.is_f64() => {
                println!("{key:<28} {:.4}", n.as_f64().unwrap());
            }
            serde_json::Value::Null => println!("{key:<28} undefined"),
            other => println!("{key:<28} {other}"),
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let gold = read_corpus_jsonl(&args.gold)?;
    let predictions = read_predictions(&args.pred)?;
    let schema = load_slot_schema(&args.schema)?;
    let report = evaluate(&gold, &predictions, &schema, args.domain_scope)?;
    print_warnings(&report.warnings);
    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            eprintln!("wrote report to {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_mismatch_report(args: MismatchReportArgs) -> Result<()> {
    let gold = read_corpus_jsonl(&args.gold)?;
    let mut rows: BTreeMap<String, MismatchCounts> = BTreeMap::new();
    for (label, path) in &args.preds {
        let predictions =
            read_predictions(path).with_context(|| format!("model `{label}`"))?;
        let (turns, warnings) = align(&gold, &predictions);
        print_warnings(&warnings);
        rows.insert(label.clone(), classify_mismatches(&turns));
    }

    let mut writer: csv::Writer<Box<dyn std::io::Write>> = match &args.out {
        Some(path) => csv::Writer::from_writer(Box::new(
            std::fs::File::create(path).with_context(|| path.display().to_string())?,
        )),
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    writer.write_record([
        "model",
        "domain_mismatch",
        "slot_meta_mismatch",
        "value_mismatch",
        "unclassified_extra",
        "missed_gold",
        "missing_prediction_turns",
    ])?;
    for (label, counts) in &rows {
        writer.write_record([
            label.as_str(),
            &counts.domain_mismatch.to_string(),
            &counts.slot_meta_mismatch.to_string(),
            &counts.value_mismatch.to_string(),
            &counts.unclassified_extra.to_string(),
            &counts.missed_gold.to_string(),
            &counts.missing_prediction_turns.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = validate_config(&args.config, &args.overrides.into_overrides())?;
    let manifest = run_pipeline(&config)?;
    print_warnings(&manifest.warnings);
    eprintln!(
        "pipeline complete: {} instances, manifest at {}",
        manifest.statistics.instances,
        config.output_dir.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let config = validate_config(&args.config, &args.overrides.into_overrides())?;
    let report = sweep(&config, &args.p_select)?;
    println!(
        "{:<12} {:<16} {:<16}",
        "p_select", "entity_rate", "ordinary_rate"
    );
    for row in &report.rows {
        println!(
            "{:<12.2} {:<16} {:<16}",
            row.prob_select,
            row.statistics
                .unit_rate_entity
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "undefined".into()),
            row.statistics
                .unit_rate_ordinary
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "undefined".into()),
        );
    }
    eprintln!(
        "wrote {} corpora and sweep.json to {}",
        report.rows.len(),
        config.output_dir.display()
    );
    Ok(())
}
