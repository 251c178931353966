//! Corpus ingestion and the normalized dialogue model.
//!
//! Ingests TRADE-preprocessed MultiWOZ split files plus an ontology file and
//! normalizes them into the [`Dialogue`] model every downstream module works
//! on: utterances lowercased with whitespace collapsed, belief states reduced
//! to (domain, slot, value) triples over the five experiment domains, per-turn
//! states cumulative. Loaded corpora are immutable and shareable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The five MultiWOZ experiment domains. Dialogues and belief triples outside
/// these (police, hospital) are dropped at load time.
pub const EXPERIMENT_DOMAINS: [&str; 5] = ["attraction", "hotel", "restaurant", "taxi", "train"];

pub fn is_experiment_domain(domain: &str) -> bool {
    EXPERIMENT_DOMAINS.contains(&domain)
}

/// Corpus split identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "val" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Corpus(format!("unknown split `{other}`"))),
        }
    }
}

/// One (domain, slot, value) unit of dialogue state.
///
/// Serialized as a three-element array `[domain, slot, value]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BeliefTriple {
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl BeliefTriple {
    pub fn new(
        domain: impl Into<String>,
        slot: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        Self {
            domain: normalize_value(&domain.into()),
            slot: normalize_value(&slot.into()),
            value: normalize_value(&value.into()),
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.domain, &self.slot)
    }
}

impl Serialize for BeliefTriple {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (&self.domain, &self.slot, &self.value).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BeliefTriple {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (domain, slot, value) = <(String, String, String)>::deserialize(deserializer)?;
        Ok(BeliefTriple::new(domain, slot, value))
    }
}

/// A belief state: triples kept sorted and unique per (domain, slot), so
/// derived equality is set equality.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BeliefState(Vec<BeliefTriple>);

impl BeliefState {
    /// Build from triples. Later triples win on (domain, slot) collisions.
    pub fn from_triples(triples: impl IntoIterator<Item = BeliefTriple>) -> Self {
        let mut map: BTreeMap<(String, String), String> = BTreeMap::new();
        for t in triples {
            map.insert((t.domain, t.slot), t.value);
        }
        BeliefState(
            map.into_iter()
                .map(|((domain, slot), value)| BeliefTriple {
                    domain,
                    slot,
                    value,
                })
                .collect(),
        )
    }

    pub fn get(&self, domain: &str, slot: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|t| t.domain == domain && t.slot == slot)
            .map(|t| t.value.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &BeliefTriple> {
        self.0.iter()
    }

    pub fn contains(&self, triple: &BeliefTriple) -> bool {
        self.0.binary_search(triple).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// State restricted to one domain.
    pub fn filtered_to_domain(&self, domain: &str) -> BeliefState {
        BeliefState(
            self.0
                .iter()
                .filter(|t| t.domain == domain)
                .cloned()
                .collect(),
        )
    }
}

impl<'de> Deserialize<'de> for BeliefState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let triples = Vec::<BeliefTriple>::deserialize(deserializer)?;
        Ok(BeliefState::from_triples(triples))
    }
}

impl FromIterator<BeliefTriple> for BeliefState {
    fn from_iter<I: IntoIterator<Item = BeliefTriple>>(iter: I) -> Self {
        BeliefState::from_triples(iter)
    }
}

/// One dialogue turn: a system/user utterance pair plus the cumulative gold
/// state after the user utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: u32,
    pub system_utterance: String,
    pub user_utterance: String,
    pub gold_state: BeliefState,
}

/// A normalized multi-turn dialogue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub domains: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

/// A loaded split plus any non-fatal warnings raised during normalization.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub split: Split,
    pub dialogues: Vec<Dialogue>,
    pub warnings: Vec<String>,
}

/// Candidate values per "domain-slot" key.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Ontology {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl Ontology {
    pub fn values(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(|v| v.as_slice())
    }

    /// Every candidate value across all entries, deduplicated.
    pub fn all_values(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flat_map(|vs| vs.iter().map(|v| v.as_str()))
            .collect()
    }
}

/// Lowercase, trim, and collapse internal whitespace to single spaces.
/// Idempotent; punctuation inside values is preserved.
pub fn normalize_value(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

// ---------------------------------------------------------------------------
// TRADE-format ingestion
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawDialogue {
    #[serde(alias = "dialogue_id")]
    dialogue_idx: String,
    #[serde(default)]
    domains: Vec<String>,
    dialogue: Vec<RawTurn>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct RawTurn {
    turn_idx: u32,
    #[serde(default)]
    system_transcript: String,
    #[serde(default)]
    transcript: String,
    #[serde(default)]
    belief_state: Vec<RawBeliefEntry>,
    // Standard TRADE fields, accepted without warnings and unused here.
    #[serde(default, rename = "turn_label")]
    _turn_label: serde::de::IgnoredAny,
    #[serde(default, rename = "domain")]
    _domain: serde::de::IgnoredAny,
    #[serde(default, rename = "system_acts")]
    _system_acts: serde::de::IgnoredAny,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct RawBeliefEntry {
    #[serde(default)]
    slots: Vec<(String, String)>,
    #[serde(default, rename = "act")]
    _act: serde::de::IgnoredAny,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Split a TRADE "domain-slot" name on its first hyphen.
fn split_slot_name(name: &str) -> Option<(&str, &str)> {
    name.split_once('-')
}

/// Load and normalize a TRADE-preprocessed MultiWOZ split file.
///
/// Dialogues are restricted to the five experiment domains; dialogues left
/// with no experiment domain are dropped. Unknown schema fields produce
/// warnings, never errors. A dialogue with zero turns is rejected.
pub fn load_corpus(path: &Path, split: Split) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Vec<RawDialogue> =
        serde_json::from_str(&text).map_err(|e| Error::from_json(path, &text, &e))?;

    let mut warnings = Vec::new();
    let mut unknown_fields: BTreeSet<String> = BTreeSet::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut dialogues = Vec::new();

    for rd in raw {
        let dialogue_id = rd.dialogue_idx.trim().to_string();
        if dialogue_id.is_empty() {
            return Err(Error::Corpus("dialogue with empty dialogue_id".into()));
        }
        if !seen_ids.insert(dialogue_id.clone()) {
            return Err(Error::Corpus(format!(
                "duplicate dialogue_id `{dialogue_id}` in {split} split"
            )));
        }
        if rd.dialogue.is_empty() {
            return Err(Error::Corpus(format!(
                "dialogue `{dialogue_id}` has zero turns"
            )));
        }
        unknown_fields.extend(rd.extra.keys().map(|k| format!("dialogue.{k}")));

        let domains: BTreeSet<String> = rd
            .domains
            .iter()
            .map(|d| normalize_value(d))
            .filter(|d| is_experiment_domain(d))
            .collect();
        if domains.is_empty() {
            // Out-of-scope dialogue (e.g. police/hospital only).
            continue;
        }

        let mut turns: Vec<Turn> = Vec::with_capacity(rd.dialogue.len());
        for rt in rd.dialogue {
            unknown_fields.extend(rt.extra.keys().map(|k| format!("turn.{k}")));
            let mut triples = Vec::new();
            let mut seen_keys: BTreeSet<(String, String)> = BTreeSet::new();
            for entry in rt.belief_state {
                unknown_fields.extend(entry.extra.keys().map(|k| format!("belief_state.{k}")));
                for (name, value) in entry.slots {
                    let name = normalize_value(&name);
                    let Some((domain, slot)) = split_slot_name(&name) else {
                        warnings.push(format!(
                            "{dialogue_id} turn {}: slot name `{name}` has no domain prefix, skipped",
                            rt.turn_idx
                        ));
                        continue;
                    };
                    if !is_experiment_domain(domain) {
                        continue;
                    }
                    let value = normalize_value(&value);
                    if value.is_empty() {
                        warnings.push(format!(
                            "{dialogue_id} turn {}: empty value for `{name}`, skipped",
                            rt.turn_idx
                        ));
                        continue;
                    }
                    if !seen_keys.insert((domain.to_string(), slot.to_string())) {
                        warnings.push(format!(
                            "{dialogue_id} turn {}: duplicate slot `{name}`, keeping last value",
                            rt.turn_idx
                        ));
                    }
                    triples.push(BeliefTriple::new(domain, slot, value));
                }
            }
            turns.push(Turn {
                turn_index: rt.turn_idx,
                system_utterance: normalize_value(&rt.system_transcript),
                user_utterance: normalize_value(&rt.transcript),
                gold_state: BeliefState::from_triples(triples),
            });
        }

        turns.sort_by_key(|t| t.turn_index);
        if turns.windows(2).any(|w| w[0].turn_index == w[1].turn_index) {
            return Err(Error::Corpus(format!(
                "dialogue `{dialogue_id}` has duplicate turn indices"
            )));
        }

        dialogues.push(Dialogue {
            dialogue_id,
            domains,
            turns,
        });
    }

    for field in unknown_fields {
        warnings.push(format!("unknown schema field `{field}` ignored"));
    }

    Ok(LoadedCorpus {
        split,
        dialogues,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Ontology
// ---------------------------------------------------------------------------

/// Load an ontology file: a JSON object mapping "domain-slot" to value lists.
/// Duplicate keys and non-list values are errors; values are normalized and
/// deduplicated preserving file order.
pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let pairs = de
        .deserialize_map(OntologyVisitor)
        .map_err(|e| Error::from_json(path, &text, &e))?;

    let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (key, value) in pairs {
        let key = normalize_value(&key);
        if entries.contains_key(&key) {
            return Err(Error::Ontology(format!("duplicate key `{key}`")));
        }
        let serde_json::Value::Array(items) = value else {
            return Err(Error::Ontology(format!(
                "value for `{key}` is not a list of strings"
            )));
        };
        let mut values = Vec::new();
        let mut seen = BTreeSet::new();
        for item in items {
            let serde_json::Value::String(s) = item else {
                return Err(Error::Ontology(format!(
                    "value for `{key}` contains a non-string element"
                )));
            };
            let v = normalize_value(&s);
            if !v.is_empty() && seen.insert(v.clone()) {
                values.push(v);
            }
        }
        entries.insert(key, values);
    }
    Ok(Ontology { entries })
}

/// Map visitor that surfaces duplicate keys (serde_json's Map would silently
/// keep the last one).
struct OntologyVisitor;

impl<'de> Visitor<'de> for OntologyVisitor {
    type Value = Vec<(String, serde_json::Value)>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON object mapping domain-slot keys to value lists")
    }

    fn visit_map<A: MapAccess<'de>>(
        self,
        mut map: A,
    ) -> std::result::Result<Self::Value, A::Error> {
        let mut pairs = Vec::new();
        while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
            pairs.push((k, v));
        }
        Ok(pairs)
    }
}

// ---------------------------------------------------------------------------
// Internal JSONL format
// ---------------------------------------------------------------------------

/// Write the normalized corpus as JSONL, one dialogue per line, LF endings.
pub fn write_corpus_jsonl<W: Write>(dialogues: &[Dialogue], mut out: W) -> Result<()> {
    for d in dialogues {
        let line = serde_json::to_string(d).expect("dialogue serialization cannot fail");
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_corpus_jsonl_file(dialogues: &[Dialogue], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_corpus_jsonl(dialogues, std::io::BufWriter::new(file))
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut dialogues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| {
            Error::Corpus(format!(
                "{}:{}: malformed dialogue record: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        dialogues.push(d);
    }
    Ok(dialogues)
}

fn io_err(source: std::io::Error) -> Error {
    Error::Io {
        path: "<writer>".into(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Data statistics and ontology coverage
// ---------------------------------------------------------------------------

/// Number of dialogues containing each experiment domain.
pub fn domain_dialogue_counts(dialogues: &[Dialogue]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = EXPERIMENT_DOMAINS
        .iter()
        .map(|d| (d.to_string(), 0))
        .collect();
    for d in dialogues {
        for dom in &d.domains {
            *counts.entry(dom.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Published per-domain dialogue counts for MultiWOZ 2.0/2.1/2.2 splits.
pub fn reference_domain_counts(split: Split) -> BTreeMap<String, usize> {
    let table: [(&str, [usize; 3]); 5] = [
        ("attraction", [2717, 401, 395]),
        ("hotel", [3381, 416, 394]),
        ("restaurant", [3813, 438, 437]),
        ("taxi", [1654, 207, 195]),
        ("train", [3103, 484, 494]),
    ];
    let col = match split {
        Split::Train => 0,
        Split::Dev => 1,
        Split::Test => 2,
    };
    table
        .iter()
        .map(|(d, counts)| (d.to_string(), counts[col]))
        .collect()
}

/// Ingestion statistics with per-domain deltas against the published table.
/// Deltas are reported, never silently swallowed.
#[derive(Clone, Debug, Serialize)]
pub struct DataStatsReport {
    pub split: Split,
    pub total_dialogues: usize,
    pub total_turns: usize,
    pub domain_counts: BTreeMap<String, usize>,
    pub expected_counts: BTreeMap<String, usize>,
    /// actual - expected per domain; all zeros when ingestion matches.
    pub deltas: BTreeMap<String, i64>,
    pub matches_reference: bool,
}

pub fn data_stats(corpus: &LoadedCorpus) -> DataStatsReport {
    let domain_counts = domain_dialogue_counts(&corpus.dialogues);
    let expected = reference_domain_counts(corpus.split);
    let deltas: BTreeMap<String, i64> = expected
        .iter()
        .map(|(d, exp)| {
            let actual = domain_counts.get(d).copied().unwrap_or(0);
            (d.clone(), actual as i64 - *exp as i64)
        })
        .collect();
    let matches_reference = deltas.values().all(|&d| d == 0);
    DataStatsReport {
        split: corpus.split,
        total_dialogues: corpus.dialogues.len(),
        total_turns: corpus.dialogues.iter().map(|d| d.turns.len()).sum(),
        domain_counts,
        expected_counts: expected,
        deltas,
        matches_reference,
    }
}

/// Gold values missing from their ontology entry.
#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub checked_triples: usize,
    /// Gold (key, value) pairs whose key exists but value is absent.
    pub missing_values: BTreeMap<String, BTreeSet<String>>,
    /// Gold keys with no ontology entry at all.
    pub unknown_keys: BTreeSet<String>,
}

impl CoverageReport {
    pub fn is_full(&self) -> bool {
        self.missing_values.is_empty() && self.unknown_keys.is_empty()
    }
}

pub fn ontology_coverage(dialogues: &[Dialogue], ontology: &Ontology) -> CoverageReport {
    let mut checked = 0usize;
    let mut missing: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for d in dialogues {
        for turn in &d.turns {
            for t in turn.gold_state.iter() {
                checked += 1;
                let key = format!("{}-{}", t.domain, t.slot);
                match ontology.values(&key) {
                    None => {
                        unknown.insert(key);
                    }
                    Some(values) => {
                        if !values.iter().any(|v| v == &t.value) {
                            missing.entry(key).or_default().insert(t.value.clone());
                        }
                    }
                }
            }
        }
    }
    CoverageReport {
        checked_triples: checked,
        missing_values: missing,
        unknown_keys: unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn normalize_value_collapses_and_lowercases() {
        assert_eq!(normalize_value("  Stansted  Airport "), "stansted airport");
        assert_eq!(normalize_value("Nusha"), "nusha");
    }

    #[test]
    fn normalize_value_preserves_punctuation() {
        assert_eq!(normalize_value("don't care"), "don't care");
    }

    #[test]
    fn normalize_value_is_idempotent() {
        for raw in ["  A  b\tC ", "don't care", "5:45", ""] {
            let once = normalize_value(raw);
            assert_eq!(normalize_value(&once), once);
        }
    }

    #[test]
    fn empty_array_loads_as_empty_corpus() {
        let f = write_temp("[]");
        let corpus = load_corpus(f.path(), Split::Train).unwrap();
        assert!(corpus.dialogues.is_empty());
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let f = write_temp("[{\"dialogue_idx\": }]");
        let err = load_corpus(f.path(), Split::Train).unwrap_err();
        match err {
            Error::Json { offset, .. } => assert_eq!(offset, 18),
            other => panic!("expected Json error, got {other:?}"),
        }
    }

    #[test]
    fn zero_turn_dialogue_is_rejected_with_id() {
        let f = write_temp(
            r#"[{"dialogue_idx": "EMPTY01.json", "domains": ["hotel"], "dialogue": []}]"#,
        );
        let err = load_corpus(f.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("EMPTY01.json"), "{err}");
    }

    #[test]
    fn non_experiment_domains_are_dropped() {
        let f = write_temp(
            r#"[
              {"dialogue_idx": "A.json", "domains": ["police"], "dialogue": [
                {"turn_idx": 0, "system_transcript": "", "transcript": "help", "belief_state": []}
              ]},
              {"dialogue_idx": "B.json", "domains": ["taxi", "police"], "dialogue": [
                {"turn_idx": 0, "system_transcript": "", "transcript": "taxi please",
                 "belief_state": [{"slots": [["taxi-destination", "Nusha"]], "act": "inform"},
                                  {"slots": [["police-name", "parkside"]], "act": "inform"}]}
              ]}
            ]"#,
        );
        let corpus = load_corpus(f.path(), Split::Train).unwrap();
        assert_eq!(corpus.dialogues.len(), 1);
        let d = &corpus.dialogues[0];
        assert_eq!(d.domains.iter().collect::<Vec<_>>(), ["taxi"]);
        let state = &d.turns[0].gold_state;
        assert_eq!(state.len(), 1);
        assert_eq!(state.get("taxi", "destination"), Some("nusha"));
    }

    #[test]
    fn unknown_fields_warn_but_load() {
        let f = write_temp(
            r#"[{"dialogue_idx": "A.json", "domains": ["hotel"], "mystery": 1, "dialogue": [
              {"turn_idx": 0, "system_transcript": "", "transcript": "hi", "belief_state": []}
            ]}]"#,
        );
        let corpus = load_corpus(f.path(), Split::Train).unwrap();
        assert_eq!(corpus.dialogues.len(), 1);
        assert!(corpus.warnings.iter().any(|w| w.contains("mystery")));
    }

    #[test]
    fn duplicate_dialogue_id_is_an_error() {
        let turn = r#"{"turn_idx": 0, "system_transcript": "", "transcript": "hi", "belief_state": []}"#;
        let f = write_temp(&format!(
            r#"[{{"dialogue_idx": "A.json", "domains": ["hotel"], "dialogue": [{turn}]}},
               {{"dialogue_idx": "A.json", "domains": ["hotel"], "dialogue": [{turn}]}}]"#
        ));
        let err = load_corpus(f.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("duplicate dialogue_id"));
    }

    #[test]
    fn ontology_dedupes_values() {
        let f = write_temp(r#"{"hotel-pricerange": ["cheap", "Expensive", "expensive"]}"#);
        let ont = load_ontology(f.path()).unwrap();
        assert_eq!(
            ont.values("hotel-pricerange").unwrap(),
            ["cheap", "expensive"]
        );
    }

    #[test]
    fn empty_ontology_loads() {
        let f = write_temp("{}");
        let ont = load_ontology(f.path()).unwrap();
        assert!(ont.entries.is_empty());
    }

    #[test]
    fn duplicate_ontology_keys_error() {
        let f = write_temp(r#"{"hotel-area": ["north"], "hotel-area": ["south"]}"#);
        let err = load_ontology(f.path()).unwrap_err();
        assert!(err.to_string().contains("hotel-area"), "{err}");
    }

    #[test]
    fn non_list_ontology_value_errors() {
        let f = write_temp(r#"{"hotel-area": "north"}"#);
        assert!(load_ontology(f.path()).is_err());
    }

    #[test]
    fn belief_state_keeps_last_on_key_collision() {
        let state = BeliefState::from_triples([
            BeliefTriple::new("hotel", "area", "north"),
            BeliefTriple::new("hotel", "area", "south"),
        ]);
        assert_eq!(state.len(), 1);
        assert_eq!(state.get("hotel", "area"), Some("south"));
    }

    #[test]
    fn corpus_jsonl_round_trips() {
        let dialogues = vec![Dialogue {
            dialogue_id: "X.json".into(),
            domains: ["hotel".to_string()].into_iter().collect(),
            turns: vec![Turn {
                turn_index: 0,
                system_utterance: String::new(),
                user_utterance: "i need a cheap hotel".into(),
                gold_state: BeliefState::from_triples([BeliefTriple::new(
                    "hotel",
                    "pricerange",
                    "cheap",
                )]),
            }],
        }];
        let mut buf = Vec::new();
        write_corpus_jsonl(&dialogues, &mut buf).unwrap();
        let f = write_temp(std::str::from_utf8(&buf).unwrap());
        let reloaded = read_corpus_jsonl(f.path()).unwrap();
        assert_eq!(dialogues, reloaded);
    }

    #[test]
    fn reference_table_is_pinned() {
        let train = reference_domain_counts(Split::Train);
        assert_eq!(train["attraction"], 2717);
        assert_eq!(train["train"], 3103);
        let test = reference_domain_counts(Split::Test);
        assert_eq!(test["taxi"], 195);
    }

    #[test]
    fn coverage_reports_missing_values() {
        let dialogues = vec![Dialogue {
            dialogue_id: "X.json".into(),
            domains: ["hotel".to_string()].into_iter().collect(),
            turns: vec![Turn {
                turn_index: 0,
                system_utterance: String::new(),
                user_utterance: "hi".into(),
                gold_state: BeliefState::from_triples([
                    BeliefTriple::new("hotel", "pricerange", "moderate"),
                    BeliefTriple::new("hotel", "area", "north"),
                ]),
            }],
        }];
        let ontology = Ontology {
            entries: [("hotel-pricerange".to_string(), vec!["cheap".to_string()])]
                .into_iter()
                .collect(),
        };
        let report = ontology_coverage(&dialogues, &ontology);
        assert_eq!(report.checked_triples, 2);
        assert!(report.missing_values["hotel-pricerange"].contains("moderate"));
        assert!(report.unknown_keys.contains("hotel-area"));
        assert!(!report.is_full());
    }
}
