//! Pipeline orchestration: config validation, staged runs, reproducibility
//! manifest, and masking-rate sweeps.
//!
//! A run executes ingest, extract-entities, mask, stats against one config
//! and writes everything (including a manifest with input/output hashes and
//! the config snapshot) under the configured output directory. Two runs with
//! equal manifest inputs produce byte-identical masked corpora.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    data_stats, load_corpus, load_ontology, write_corpus_jsonl_file, DataStatsReport, Dialogue,
    LoadedCorpus, Ontology, Split,
};
use crate::entity::{
    build_entity_set, entities_from_ontology, entities_from_spans, gazetteer_extract,
    load_span_file, merge_entity_sets, write_entity_set, EntitySet, EntitySourceKind,
    FilterConfig, DEFAULT_TIME_NUMBER_PATTERNS,
};
use crate::error::{Error, Result};
use crate::skm::{emit_corpus, EmissionStats, MaskingConfig, ReplacementPolicy};
use crate::tokenizer::{load_vocabulary, InstanceLayout, InstanceOptions, Vocabulary};

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    split: Option<String>,
    paths: RawPaths,
    #[serde(default)]
    entities: RawEntities,
    #[serde(default)]
    masking: RawMasking,
    #[serde(default)]
    instances: RawInstances,
    #[serde(default)]
    filter: RawFilter,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    corpus: PathBuf,
    ontology: PathBuf,
    vocab: PathBuf,
    output_dir: PathBuf,
    spacy_spans: Option<PathBuf>,
    ner_spans: Option<PathBuf>,
    flair_spans: Option<PathBuf>,
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntities {
    /// Source toggles; defaults to every source with available inputs.
    sources: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMasking {
    prob_select: Option<f64>,
    prob_origin: Option<f64>,
    seed: Option<u64>,
    mask_token_prob: Option<f64>,
    random_token_prob: Option<f64>,
    keep_prob: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstances {
    layout: Option<String>,
    include_empty_system: Option<bool>,
    max_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    /// Appended to the default time/number patterns.
    extra_time_number_patterns: Option<Vec<String>>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub p_select: Option<f64>,
    pub p_origin: Option<f64>,
    pub seed: Option<u64>,
    pub layout: Option<InstanceLayout>,
    pub output_dir: Option<PathBuf>,
    pub sources: Option<Vec<EntitySourceKind>>,
    pub include_empty_system: Option<bool>,
    pub max_tokens: Option<usize>,
}

/// A fully validated pipeline configuration with resolved paths.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineConfig {
    pub split: Split,
    pub corpus: PathBuf,
    pub ontology: PathBuf,
    pub vocab: PathBuf,
    pub output_dir: PathBuf,
    pub spacy_spans: Option<PathBuf>,
    pub ner_spans: Option<PathBuf>,
    pub flair_spans: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub sources: Vec<EntitySourceKind>,
    pub masking: MaskingConfig,
    pub instances: InstanceOptions,
    pub extra_time_number_patterns: Vec<String>,
}

impl PipelineConfig {
    pub fn filter_config(&self) -> Result<FilterConfig> {
        let stopwords: Vec<String> = match &self.stopwords {
            None => crate::entity::DEFAULT_STOPWORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            Some(path) => fs::read_to_string(path)
                .map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
        };
        let mut patterns: Vec<String> = DEFAULT_TIME_NUMBER_PATTERNS
            .iter()
            .map(|s| s.to_string())
            .collect();
        patterns.extend(self.extra_time_number_patterns.iter().cloned());
        FilterConfig::new(
            stopwords,
            patterns,
            "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".chars(),
        )
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} path `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}

/// Parse, resolve, and validate a config file. Unknown keys, missing paths,
/// and out-of-range probabilities are all rejected here, before any stage
/// runs. Defaults: prob_select 0.4, prob_origin 0.2, seed 42.
pub fn validate_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let split: Split = raw.split.as_deref().unwrap_or("train").parse()?;

    let defaults = MaskingConfig::default();
    let replacement_defaults = ReplacementPolicy::default();
    let masking = MaskingConfig {
        prob_select: overrides
            .p_select
            .or(raw.masking.prob_select)
            .unwrap_or(defaults.prob_select),
        prob_origin: overrides
            .p_origin
            .or(raw.masking.prob_origin)
            .unwrap_or(defaults.prob_origin),
        seed: overrides.seed.or(raw.masking.seed).unwrap_or(defaults.seed),
        replacement: ReplacementPolicy {
            mask_token: raw
                .masking
                .mask_token_prob
                .unwrap_or(replacement_defaults.mask_token),
            random_token: raw
                .masking
                .random_token_prob
                .unwrap_or(replacement_defaults.random_token),
            keep: raw.masking.keep_prob.unwrap_or(replacement_defaults.keep),
        },
    };
    masking.validate()?;

    let instance_defaults = InstanceOptions::default();
    let layout = match &overrides.layout {
        Some(l) => *l,
        None => match raw.instances.layout.as_deref() {
            Some(s) => s.parse()?,
            None => instance_defaults.layout,
        },
    };
    let instances = InstanceOptions {
        layout,
        include_empty_system: overrides
            .include_empty_system
            .or(raw.instances.include_empty_system)
            .unwrap_or(instance_defaults.include_empty_system),
        max_tokens: overrides
            .max_tokens
            .or(raw.instances.max_tokens)
            .unwrap_or(instance_defaults.max_tokens),
    };
    instances.validate()?;

    let corpus = resolve(&base, &raw.paths.corpus);
    let ontology = resolve(&base, &raw.paths.ontology);
    let vocab = resolve(&base, &raw.paths.vocab);
    let output_dir = overrides
        .output_dir
        .clone()
        .unwrap_or_else(|| resolve(&base, &raw.paths.output_dir));
    let spacy_spans = raw.paths.spacy_spans.as_ref().map(|p| resolve(&base, p));
    let ner_spans = raw.paths.ner_spans.as_ref().map(|p| resolve(&base, p));
    let flair_spans = raw.paths.flair_spans.as_ref().map(|p| resolve(&base, p));
    let stopwords = raw.paths.stopwords.as_ref().map(|p| resolve(&base, p));

    require_exists(&corpus, "corpus")?;
    require_exists(&ontology, "ontology")?;
    require_exists(&vocab, "vocab")?;
    for (p, what) in [
        (&spacy_spans, "spacy_spans"),
        (&ner_spans, "ner_spans"),
        (&flair_spans, "flair_spans"),
        (&stopwords, "stopwords"),
    ] {
        if let Some(p) = p {
            require_exists(p, what)?;
        }
    }

    let sources: Vec<EntitySourceKind> = match (&overrides.sources, &raw.entities.sources) {
        (Some(s), _) => s.clone(),
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>>>()?,
        (None, None) => {
            // Every source whose inputs are available.
            let mut s = vec![EntitySourceKind::Ontology, EntitySourceKind::Gazetteer];
            if spacy_spans.is_some() {
                s.push(EntitySourceKind::SpacyFile);
            }
            if ner_spans.is_some() {
                s.push(EntitySourceKind::NerFile);
            }
            if flair_spans.is_some() {
                s.push(EntitySourceKind::FlairFile);
            }
            s
        }
    };
    if sources.is_empty() {
        return Err(Error::Config("entity source list is empty".into()));
    }
    for (kind, path) in [
        (EntitySourceKind::SpacyFile, &spacy_spans),
        (EntitySourceKind::NerFile, &ner_spans),
        (EntitySourceKind::FlairFile, &flair_spans),
    ] {
        if sources.contains(&kind) && path.is_none() {
            return Err(Error::Config(format!(
                "source `{kind}` requires a span file path in [paths]"
            )));
        }
    }

    fs::create_dir_all(&output_dir).map_err(|source| Error::Io {
        path: output_dir.clone(),
        source,
    })?;

    Ok(PipelineConfig {
        split,
        corpus,
        ontology,
        vocab,
        output_dir,
        spacy_spans,
        ner_spans,
        flair_spans,
        stopwords,
        sources,
        masking,
        instances,
        extra_time_number_patterns: raw
            .filter
            .extra_time_number_patterns
            .unwrap_or_default(),
    })
}

// ---------------------------------------------------------------------------
// Entity extraction stage
// ---------------------------------------------------------------------------

/// Entity sets per source, merged, with per-source counts for the manifest.
pub struct EntityExtraction {
    pub set: EntitySet,
    pub per_source: BTreeMap<String, (usize, usize)>,
    pub warnings: Vec<String>,
}

pub fn extract_entities(
    dialogues: &[Dialogue],
    ontology: &Ontology,
    vocab: &Vocabulary,
    filter: &FilterConfig,
    sources: &[EntitySourceKind],
    spacy_spans: Option<&Path>,
    ner_spans: Option<&Path>,
    flair_spans: Option<&Path>,
) -> Result<EntityExtraction> {
    let mut warnings = Vec::new();
    let mut per_source = BTreeMap::new();
    let mut sets = Vec::new();

    for &kind in sources {
        let raws: Vec<String> = match kind {
            EntitySourceKind::Ontology => entities_from_ontology(ontology),
            EntitySourceKind::Gazetteer => {
                let terms = ontology.all_values();
                entities_from_spans(&gazetteer_extract(dialogues, &terms))
            }
            EntitySourceKind::SpacyFile | EntitySourceKind::NerFile
            | EntitySourceKind::FlairFile => {
                let path = match kind {
                    EntitySourceKind::SpacyFile => spacy_spans,
                    EntitySourceKind::NerFile => ner_spans,
                    _ => flair_spans,
                }
                .ok_or_else(|| {
                    Error::Config(format!("source `{kind}` requires a span file path"))
                })?;
                let (spans, mut span_warnings) = load_span_file(path, dialogues)?;
                for w in span_warnings.drain(..) {
                    warnings.push(format!("{kind}: {w}"));
                }
                entities_from_spans(&spans)
            }
        };
        let set = build_entity_set(kind, &raws, vocab, filter);
        per_source.insert(kind.label().to_string(), (set.word_count(), set.phrase_count()));
        sets.push(set);
    }

    Ok(EntityExtraction {
        set: merge_entity_sets(sets),
        per_source,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to reproduce a run exactly: config snapshot, input
/// hashes, seed, output hashes, and the realized statistics.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Unix timestamp; the only field allowed to differ between equal runs.
    pub created_unix: u64,
    pub config: PipelineConfig,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub entity_counts_per_source: BTreeMap<String, (usize, usize)>,
    pub entity_words: usize,
    pub entity_phrases: usize,
    pub data_stats: DataStatsReport,
    pub statistics: EmissionStats,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// The manifest as JSON with the timestamp removed, for equality checks.
    pub fn comparable(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        value
            .as_object_mut()
            .expect("manifest is an object")
            .remove("created_unix");
        value
    }
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Execute ingest, extract-entities, mask, stats. Writes corpus.jsonl,
/// entities.json, masked.jsonl, stats.json, and manifest.json under the
/// output directory and nothing anywhere else. On failure every file this
/// run created is removed.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    let mut created: Vec<PathBuf> = Vec::new();
    let result = run_pipeline_inner(config, &mut created);
    if result.is_err() {
        for path in created {
            let _ = fs::remove_file(path);
        }
    }
    result
}

fn run_pipeline_inner(config: &PipelineConfig, created: &mut Vec<PathBuf>) -> Result<RunManifest> {
    let out = &config.output_dir;
    let corpus_out = out.join("corpus.jsonl");
    let entities_out = out.join("entities.json");
    let masked_out = out.join("masked.jsonl");
    let stats_out = out.join("stats.json");
    let manifest_out = out.join("manifest.json");

    // ingest
    let loaded: LoadedCorpus = stage("ingest", load_corpus(&config.corpus, config.split))?;
    let ontology = stage("ingest", load_ontology(&config.ontology))?;
    let vocab = stage("ingest", load_vocabulary(&config.vocab))?;
    let filter = stage("ingest", config.filter_config())?;
    created.push(corpus_out.clone());
    stage("ingest", write_corpus_jsonl_file(&loaded.dialogues, &corpus_out))?;
    let mut warnings = loaded.warnings.clone();

    // extract-entities
    let extraction = stage(
        "extract-entities",
        extract_entities(
            &loaded.dialogues,
            &ontology,
            &vocab,
            &filter,
            &config.sources,
            config.spacy_spans.as_deref(),
            config.ner_spans.as_deref(),
            config.flair_spans.as_deref(),
        ),
    )?;
    warnings.extend(extraction.warnings.iter().cloned());
    created.push(entities_out.clone());
    stage("extract-entities", write_entity_set(&extraction.set, &entities_out))?;

    // mask
    created.push(masked_out.clone());
    let statistics = stage(
        "mask",
        emit_corpus(
            &loaded.dialogues,
            &extraction.set,
            &config.masking,
            &vocab,
            &config.instances,
            &masked_out,
        ),
    )?;

    // stats
    created.push(stats_out.clone());
    stage(
        "stats",
        write_json(&stats_out, &statistics),
    )?;

    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("corpus".to_string(), sha256_file(&config.corpus)?);
    input_hashes.insert("ontology".to_string(), sha256_file(&config.ontology)?);
    input_hashes.insert("vocab".to_string(), sha256_file(&config.vocab)?);
    for (name, path) in [
        ("spacy_spans", &config.spacy_spans),
        ("ner_spans", &config.ner_spans),
        ("flair_spans", &config.flair_spans),
        ("stopwords", &config.stopwords),
    ] {
        if let Some(path) = path {
            input_hashes.insert(name.to_string(), sha256_file(path)?);
        }
    }
    let mut output_hashes = BTreeMap::new();
    for (name, path) in [
        ("corpus.jsonl", &corpus_out),
        ("entities.json", &entities_out),
        ("masked.jsonl", &masked_out),
        ("stats.json", &stats_out),
    ] {
        output_hashes.insert(name.to_string(), sha256_file(path)?);
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: config.clone(),
        input_hashes,
        output_hashes,
        entity_counts_per_source: extraction.per_source,
        entity_words: extraction.set.word_count(),
        entity_phrases: extraction.set.phrase_count(),
        data_stats: data_stats(&loaded),
        statistics,
        warnings,
    };
    created.push(manifest_out.clone());
    write_json(&manifest_out, &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, json + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// One emitted corpus of a masking-rate sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub prob_select: f64,
    pub output: PathBuf,
    pub statistics: EmissionStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub prob_origin: f64,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

/// Emit one masked corpus per select probability, fixed origin probability
/// and seed. Realized entity rates track the sweep because per-unit draws
/// are threshold comparisons against fixed uniforms.
pub fn sweep(config: &PipelineConfig, p_selects: &[f64]) -> Result<SweepReport> {
    if p_selects.is_empty() {
        return Err(Error::Config("sweep requires at least one p_select".into()));
    }
    let loaded = load_corpus(&config.corpus, config.split)?;
    let ontology = load_ontology(&config.ontology)?;
    let vocab = load_vocabulary(&config.vocab)?;
    let filter = config.filter_config()?;
    let extraction = extract_entities(
        &loaded.dialogues,
        &ontology,
        &vocab,
        &filter,
        &config.sources,
        config.spacy_spans.as_deref(),
        config.ner_spans.as_deref(),
        config.flair_spans.as_deref(),
    )?;

    let mut rows = Vec::new();
    for &p in p_selects {
        let masking = MaskingConfig {
            prob_select: p,
            ..config.masking
        };
        masking.validate()?;
        let output = config
            .output_dir
            .join(format!("masked_select_{p:.2}.jsonl"));
        let statistics = emit_corpus(
            &loaded.dialogues,
            &extraction.set,
            &masking,
            &vocab,
            &config.instances,
            &output,
        )?;
        rows.push(SweepRow {
            prob_select: p,
            output,
            statistics,
        });
    }
    let report = SweepReport {
        prob_origin: config.masking.prob_origin,
        seed: config.masking.seed,
        rows,
    };
    write_json(&config.output_dir.join("sweep.json"), &report)?;
    Ok(report)
}
