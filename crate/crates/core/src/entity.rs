//! Entity construction: word and phrase entity sets from four sources.
//!
//! Raw entities come from the ontology, from offline tagger span files
//! (NER / spaCy / flair exports), and from an in-repo gazetteer matcher that
//! scans the corpus for ontology terms. Word entities are filtered against
//! stopwords, times/numbers, and punctuation; phrase entities keep their
//! stopwords but are screened for times/numbers and `[UNK]`-tokenizing words.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use regex::RegexSet;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_value, Dialogue};
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Where a raw entity came from. The kind decides which construction paths
/// apply: span-unit (phrase) extraction is only trusted for the ontology and
/// spaCy sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySourceKind {
    Ontology,
    NerFile,
    SpacyFile,
    FlairFile,
    Gazetteer,
}

impl EntitySourceKind {
    pub const ALL: [EntitySourceKind; 5] = [
        EntitySourceKind::Ontology,
        EntitySourceKind::NerFile,
        EntitySourceKind::SpacyFile,
        EntitySourceKind::FlairFile,
        EntitySourceKind::Gazetteer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EntitySourceKind::Ontology => "ontology",
            EntitySourceKind::NerFile => "ner_file",
            EntitySourceKind::SpacyFile => "spacy_file",
            EntitySourceKind::FlairFile => "flair_file",
            EntitySourceKind::Gazetteer => "gazetteer",
        }
    }

    /// Phrase entities are built only from ontology and spaCy raws.
    pub fn phrase_eligible(self) -> bool {
        matches!(
            self,
            EntitySourceKind::Ontology | EntitySourceKind::SpacyFile
        )
    }
}

impl fmt::Display for EntitySourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EntitySourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ontology" => Ok(EntitySourceKind::Ontology),
            "ner_file" | "ner" => Ok(EntitySourceKind::NerFile),
            "spacy_file" | "spacy" => Ok(EntitySourceKind::SpacyFile),
            "flair_file" | "flair" => Ok(EntitySourceKind::FlairFile),
            "gazetteer" => Ok(EntitySourceKind::Gazetteer),
            other => Err(Error::Config(format!("unknown entity source `{other}`"))),
        }
    }
}

/// Which utterance of a turn a span annotation points into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    System,
    User,
}

/// One tagger span over a normalized utterance. Offsets are byte offsets
/// into the UTF-8 utterance text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub side: Side,
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
    pub label: String,
}

/// Load a JSONL span file and validate every record against the corpus.
/// Out-of-range offsets or surface/slice mismatches are errors carrying the
/// record number; records pointing at unknown turns are skipped with a
/// warning.
pub fn load_span_file(
    path: &Path,
    dialogues: &[Dialogue],
) -> Result<(Vec<SpanAnnotation>, Vec<String>)> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let turns: HashMap<(&str, u32), &crate::corpus::Turn> = dialogues
        .iter()
        .flat_map(|d| {
            d.turns
                .iter()
                .map(move |t| ((d.dialogue_id.as_str(), t.turn_index), t))
        })
        .collect();

    let mut spans = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let record_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let span: SpanAnnotation = serde_json::from_str(&line).map_err(|e| {
            Error::Span(format!(
                "{}: record {record_no}: malformed record: {e}",
                path.display()
            ))
        })?;
        let Some(turn) = turns.get(&(span.dialogue_id.as_str(), span.turn_index)) else {
            warnings.push(format!(
                "record {record_no}: unknown dialogue_id/turn `{}`/{}, skipped",
                span.dialogue_id, span.turn_index
            ));
            continue;
        };
        let utterance = match span.side {
            Side::System => &turn.system_utterance,
            Side::User => &turn.user_utterance,
        };
        if span.char_start >= span.char_end || span.char_end > utterance.len() {
            return Err(Error::Span(format!(
                "record {record_no}: offsets {}..{} out of range for utterance of length {}",
                span.char_start,
                span.char_end,
                utterance.len()
            )));
        }
        if !utterance.is_char_boundary(span.char_start)
            || !utterance.is_char_boundary(span.char_end)
        {
            return Err(Error::Span(format!(
                "record {record_no}: offsets {}..{} split a UTF-8 character",
                span.char_start, span.char_end
            )));
        }
        let slice = &utterance[span.char_start..span.char_end];
        if slice != span.surface {
            return Err(Error::Span(format!(
                "record {record_no}: surface `{}` does not equal utterance slice `{slice}`",
                span.surface
            )));
        }
        spans.push(span);
    }
    Ok((spans, warnings))
}

/// Scan the corpus for gazetteer terms, reporting longest, case-insensitive,
/// whole-word matches as spans. A desk-scale stand-in for a neural tagger.
pub fn gazetteer_extract(dialogues: &[Dialogue], terms: &BTreeSet<&str>) -> Vec<SpanAnnotation> {
    let term_set: HashSet<String> = terms.iter().map(|t| normalize_value(t)).collect();
    let max_words = term_set
        .iter()
        .map(|t| t.split_whitespace().count())
        .max()
        .unwrap_or(0);
    if max_words == 0 {
        return Vec::new();
    }

    let mut spans = Vec::new();
    for d in dialogues {
        for turn in &d.turns {
            for (side, utterance) in [
                (Side::System, &turn.system_utterance),
                (Side::User, &turn.user_utterance),
            ] {
                scan_utterance(
                    &d.dialogue_id,
                    turn.turn_index,
                    side,
                    utterance,
                    &term_set,
                    max_words,
                    &mut spans,
                );
            }
        }
    }
    spans
}

fn scan_utterance(
    dialogue_id: &str,
    turn_index: u32,
    side: Side,
    utterance: &str,
    terms: &HashSet<String>,
    max_words: usize,
    out: &mut Vec<SpanAnnotation>,
) {
    // (byte_start, byte_end) per whitespace word; utterances are normalized,
    // so words are separated by single spaces.
    let words: Vec<(usize, usize)> = utterance
        .split_whitespace()
        .map(|w| {
            let start = w.as_ptr() as usize - utterance.as_ptr() as usize;
            (start, start + w.len())
        })
        .collect();

    let mut i = 0usize;
    while i < words.len() {
        let mut matched = false;
        for k in (1..=max_words.min(words.len() - i)).rev() {
            let start = words[i].0;
            let end = words[i + k - 1].1;
            let window = &utterance[start..end];
            if terms.contains(window) {
                out.push(SpanAnnotation {
                    dialogue_id: dialogue_id.to_string(),
                    turn_index,
                    side,
                    char_start: start,
                    char_end: end,
                    surface: window.to_string(),
                    label: "GAZ".to_string(),
                });
                i += k;
                matched = true;
                break;
            }
        }
        if !matched {
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Snapshot of a standard English stopword list (179 entries); overridable
/// through [`FilterConfig::new`].
pub const DEFAULT_STOPWORDS: [&str; 179] = [
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan", "shan't",
    "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't", "wouldn",
    "wouldn't",
];

/// Default time/number patterns: pure digits, digit ordinals, clock times
/// with optional meridiem, bare hour+meridiem, spelled-out cardinals.
pub const DEFAULT_TIME_NUMBER_PATTERNS: [&str; 5] = [
    r"^[0-9]+$",
    r"^[0-9]+(st|nd|rd|th)$",
    r"^[0-9]{1,2}:[0-9]{2}(am|pm)?$",
    r"^[0-9]{1,2}(am|pm)$",
    r"^(one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|thirteen|fourteen|fifteen|sixteen|seventeen|eighteen|nineteen|twenty)$",
];

const ASCII_PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Word-entity filtering rules: stopwords, time/number patterns, punctuation.
#[derive(Clone, Debug)]
pub struct FilterConfig {
    stopwords: BTreeSet<String>,
    patterns: Vec<String>,
    punctuation: BTreeSet<char>,
    compiled: RegexSet,
}

impl FilterConfig {
    pub fn new(
        stopwords: impl IntoIterator<Item = String>,
        patterns: Vec<String>,
        punctuation: impl IntoIterator<Item = char>,
    ) -> Result<Self> {
        let stopwords: BTreeSet<String> =
            stopwords.into_iter().map(|w| normalize_value(&w)).collect();
        if stopwords.is_empty() {
            return Err(Error::Filter("stopword list is empty".into()));
        }
        let compiled = RegexSet::new(&patterns)
            .map_err(|e| Error::Filter(format!("time/number pattern does not compile: {e}")))?;
        Ok(Self {
            stopwords,
            patterns,
            punctuation: punctuation.into_iter().collect(),
            compiled,
        })
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn is_pure_punctuation(&self, word: &str) -> bool {
        !word.is_empty() && word.chars().all(|c| self.punctuation.contains(&c))
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig::new(
            DEFAULT_STOPWORDS.iter().map(|s| s.to_string()),
            DEFAULT_TIME_NUMBER_PATTERNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ASCII_PUNCTUATION.chars(),
        )
        .expect("default filter config is valid")
    }
}

/// True iff the single word matches a time pattern or is purely
/// numeric/ordinal (including spelled-out cardinals).
pub fn is_time_or_number(word: &str, cfg: &FilterConfig) -> bool {
    cfg.compiled.is_match(word)
}

// ---------------------------------------------------------------------------
// Entity sets
// ---------------------------------------------------------------------------

/// Word and phrase entity sets with per-entry provenance labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntitySet {
    words: BTreeMap<String, BTreeSet<String>>,
    phrases: BTreeMap<String, BTreeSet<String>>,
}

impl EntitySet {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.phrases.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(|s| s.as_str())
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrases.keys().map(|s| s.as_str())
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn contains_phrase(&self, phrase: &str) -> bool {
        self.phrases.contains_key(phrase)
    }

    pub fn word_provenance(&self, word: &str) -> Option<&BTreeSet<String>> {
        self.words.get(word)
    }

    pub fn phrase_provenance(&self, phrase: &str) -> Option<&BTreeSet<String>> {
        self.phrases.get(phrase)
    }

    pub fn insert_word(&mut self, word: String, source: &str) {
        self.words.entry(word).or_default().insert(source.to_string());
    }

    pub fn insert_phrase(&mut self, phrase: String, source: &str) {
        self.phrases
            .entry(phrase)
            .or_default()
            .insert(source.to_string());
    }
}

/// Every ontology candidate value as a raw entity string.
pub fn entities_from_ontology(ontology: &crate::corpus::Ontology) -> Vec<String> {
    ontology
        .entries
        .values()
        .flat_map(|vs| vs.iter().cloned())
        .collect()
}

/// Raw entities from validated span annotations (their surfaces, normalized).
pub fn entities_from_spans(spans: &[SpanAnnotation]) -> Vec<String> {
    spans.iter().map(|s| normalize_value(&s.surface)).collect()
}

/// Split raw entities into word units and filter: no times/numbers, no
/// stopwords, no pure punctuation.
pub fn build_word_entities<'a>(
    raws: impl IntoIterator<Item = &'a str>,
    cfg: &FilterConfig,
) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for raw in raws {
        for word in normalize_value(raw).split_whitespace() {
            if is_time_or_number(word, cfg) || cfg.is_stopword(word) || cfg.is_pure_punctuation(word)
            {
                continue;
            }
            words.insert(word.to_string());
        }
    }
    words
}

/// Keep multi-word raw entities whose words neither hit `[UNK]` nor match a
/// time/number pattern. Stopwords inside phrases are retained: filtering is
/// not conducted for masking in span units.
pub fn build_phrase_entities<'a>(
    raws: impl IntoIterator<Item = &'a str>,
    vocab: &Vocabulary,
    cfg: &FilterConfig,
) -> BTreeSet<String> {
    let mut phrases = BTreeSet::new();
    for raw in raws {
        let phrase = normalize_value(raw);
        let words: Vec<&str> = phrase.split_whitespace().collect();
        if words.len() < 2 {
            continue;
        }
        if words.iter().any(|w| is_time_or_number(w, cfg)) {
            continue;
        }
        if vocab.hits_unk(&phrase) {
            continue;
        }
        phrases.insert(phrase);
    }
    phrases
}

/// Build the entity set contributed by one source.
pub fn build_entity_set(
    kind: EntitySourceKind,
    raws: &[String],
    vocab: &Vocabulary,
    cfg: &FilterConfig,
) -> EntitySet {
    let mut set = EntitySet::default();
    let label = kind.label();
    for word in build_word_entities(raws.iter().map(|s| s.as_str()), cfg) {
        set.insert_word(word, label);
    }
    if kind.phrase_eligible() {
        for phrase in build_phrase_entities(raws.iter().map(|s| s.as_str()), vocab, cfg) {
            set.insert_phrase(phrase, label);
        }
    }
    set
}

/// Union of entity sets with per-entry provenance union. Associative,
/// commutative, idempotent.
pub fn merge_entity_sets(sets: impl IntoIterator<Item = EntitySet>) -> EntitySet {
    let mut merged = EntitySet::default();
    for set in sets {
        for (word, sources) in set.words {
            merged.words.entry(word).or_default().extend(sources);
        }
        for (phrase, sources) in set.phrases {
            merged.phrases.entry(phrase).or_default().extend(sources);
        }
    }
    merged
}

// ---------------------------------------------------------------------------
// Entity set file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EntitySetFile {
    words: Vec<String>,
    phrases: Vec<String>,
    provenance: BTreeMap<String, Vec<String>>,
}

pub fn write_entity_set(set: &EntitySet, path: &Path) -> Result<()> {
    let mut provenance = BTreeMap::new();
    for (entry, sources) in set.words.iter().chain(set.phrases.iter()) {
        provenance.insert(entry.clone(), sources.iter().cloned().collect::<Vec<_>>());
    }
    let file = EntitySetFile {
        words: set.words.keys().cloned().collect(),
        phrases: set.phrases.keys().cloned().collect(),
        provenance,
    };
    let json = serde_json::to_string_pretty(&file).expect("entity set serialization cannot fail");
    fs::write(path, json + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_entity_set(path: &Path) -> Result<EntitySet> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: EntitySetFile =
        serde_json::from_str(&text).map_err(|e| Error::from_json(path, &text, &e))?;
    let mut set = EntitySet::default();
    for word in file.words {
        if word.contains(char::is_whitespace) || word.is_empty() {
            return Err(Error::Filter(format!(
                "word entity `{word}` must be a single non-empty word"
            )));
        }
        let sources = file.provenance.get(&word).cloned().unwrap_or_default();
        set.words.insert(word, sources.into_iter().collect());
    }
    for phrase in file.phrases {
        if phrase.split_whitespace().count() < 2 {
            return Err(Error::Filter(format!(
                "phrase entity `{phrase}` must contain at least two words"
            )));
        }
        let sources = file.provenance.get(&phrase).cloned().unwrap_or_default();
        set.phrases.insert(phrase, sources.into_iter().collect());
    }
    Ok(set)
}
