//! Evaluation of DST prediction files: joint goal accuracy, slot accuracy,
//! relative slot accuracy, and the domain / slot-meta / value mismatch
//! taxonomy.
//!
//! All metrics compare normalized values. Absent slots carry the schema's
//! none marker on both sides, so an explicit none-valued triple and an
//! omitted slot compare equal under SA and RSA; joint goal accuracy remains
//! exact set equality.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_experiment_domain, normalize_value, BeliefState, BeliefTriple, Dialogue};
use crate::error::{Error, Result};

/// One model prediction for one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub predicted_state: BeliefState,
}

/// Read a JSONL prediction file.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Metrics(format!(
                "{}:{}: malformed prediction record: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// The predefined (domain, slot) pairs scored by slot accuracy, plus the
/// value string standing for "not mentioned".
#[derive(Clone, Debug, PartialEq)]
pub struct SlotSchema {
    pairs: Vec<(String, String)>,
    pair_set: HashSet<(String, String)>,
    none_marker: String,
}

impl SlotSchema {
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (String, String)>,
        none_marker: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        for (d, s) in pairs {
            let pair = (normalize_value(&d), normalize_value(&s));
            if !seen.insert(pair.clone()) {
                return Err(Error::Metrics(format!(
                    "duplicate schema slot `{}-{}`",
                    pair.0, pair.1
                )));
            }
            list.push(pair);
        }
        if list.is_empty() {
            return Err(Error::Metrics("slot schema is empty".into()));
        }
        Ok(Self {
            pair_set: seen,
            pairs: list,
            none_marker: normalize_value(&none_marker.into()),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn none_marker(&self) -> &str {
        &self.none_marker
    }

    pub fn contains(&self, domain: &str, slot: &str) -> bool {
        self.pair_set
            .contains(&(domain.to_string(), slot.to_string()))
    }

    /// Schema restricted to one domain.
    pub fn restricted_to(&self, domain: &str) -> Option<SlotSchema> {
        let pairs: Vec<_> = self
            .pairs
            .iter()
            .filter(|(d, _)| d == domain)
            .cloned()
            .collect();
        if pairs.is_empty() {
            return None;
        }
        Some(SlotSchema::from_pairs(pairs, self.none_marker.clone()).expect("subset stays valid"))
    }
}

#[derive(Deserialize)]
struct SlotSchemaFile {
    slots: Vec<String>,
    #[serde(default = "default_none_marker")]
    none_marker: String,
}

fn default_none_marker() -> String {
    "none".to_string()
}

/// Load a schema file: `{"slots": ["hotel-pricerange", ...], "none_marker": "none"}`.
pub fn load_slot_schema(path: &Path) -> Result<SlotSchema> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: SlotSchemaFile =
        serde_json::from_str(&text).map_err(|e| Error::from_json(path, &text, &e))?;
    let mut pairs = Vec::new();
    for name in file.slots {
        let name = normalize_value(&name);
        let Some((d, s)) = name.split_once('-') else {
            return Err(Error::Metrics(format!(
                "schema slot `{name}` has no domain prefix"
            )));
        };
        pairs.push((d.to_string(), s.to_string()));
    }
    SlotSchema::from_pairs(pairs, file.none_marker)
}

/// A gold turn paired with its prediction, if any.
#[derive(Clone, Debug)]
pub struct AlignedTurn<'a> {
    pub dialogue_id: &'a str,
    pub turn_index: u32,
    pub domains: &'a BTreeSet<String>,
    pub gold: &'a BeliefState,
    pub pred: Option<&'a BeliefState>,
}

/// Pair every gold turn with its prediction record. Gold turns without a
/// prediction keep `pred = None` and are scored as misses, never dropped.
pub fn align<'a>(
    dialogues: &'a [Dialogue],
    predictions: &'a [PredictionRecord],
) -> (Vec<AlignedTurn<'a>>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut by_key: HashMap<(&str, u32), &BeliefState> = HashMap::new();
    for rec in predictions {
        if by_key
            .insert((rec.dialogue_id.as_str(), rec.turn_index), &rec.predicted_state)
            .is_some()
        {
            warnings.push(format!(
                "duplicate prediction for {} turn {}, keeping last",
                rec.dialogue_id, rec.turn_index
            ));
        }
    }
    let mut turns = Vec::new();
    for d in dialogues {
        for t in &d.turns {
            turns.push(AlignedTurn {
                dialogue_id: &d.dialogue_id,
                turn_index: t.turn_index,
                domains: &d.domains,
                gold: &t.gold_state,
                pred: by_key.get(&(d.dialogue_id.as_str(), t.turn_index)).copied(),
            });
        }
    }
    (turns, warnings)
}

fn value_or_none<'a>(state: Option<&'a BeliefState>, key: &(String, String), none: &'a str) -> &'a str {
    state
        .and_then(|s| s.get(&key.0, &key.1))
        .unwrap_or(none)
}

/// Fraction of turns whose predicted state equals the gold state exactly.
/// Missing predictions are misses.
pub fn joint_goal_accuracy(turns: &[AlignedTurn]) -> Option<f64> {
    if turns.is_empty() {
        return None;
    }
    let hits = turns.iter().filter(|t| jga_hit(t)).count();
    Some(hits as f64 / turns.len() as f64)
}

pub fn jga_hit(turn: &AlignedTurn) -> bool {
    turn.pred.map(|p| p == turn.gold).unwrap_or(false)
}

/// Per-turn slot accuracy over all predefined slots, then averaged over
/// turns. Returns (accuracy, out-of-schema warnings).
pub fn slot_accuracy(turns: &[AlignedTurn], schema: &SlotSchema) -> (Option<f64>, Vec<String>) {
    if turns.is_empty() {
        return (None, Vec::new());
    }
    let mut out_of_schema: BTreeSet<String> = BTreeSet::new();
    let mut sum = 0.0f64;
    for turn in turns {
        sum += turn_slot_accuracy(turn, schema, &mut out_of_schema);
    }
    let warnings = out_of_schema
        .into_iter()
        .map(|k| format!("triple for `{k}` is outside the slot schema and can never score"))
        .collect();
    (Some(sum / turns.len() as f64), warnings)
}

fn turn_slot_accuracy(
    turn: &AlignedTurn,
    schema: &SlotSchema,
    out_of_schema: &mut BTreeSet<String>,
) -> f64 {
    for t in turn.gold.iter().chain(turn.pred.into_iter().flat_map(|p| p.iter())) {
        if !schema.contains(&t.domain, &t.slot) {
            out_of_schema.insert(format!("{}-{}", t.domain, t.slot));
        }
    }
    let none = schema.none_marker();
    let correct = schema
        .pairs()
        .iter()
        .filter(|key| {
            value_or_none(Some(turn.gold), key, none) == value_or_none(turn.pred, key, none)
        })
        .count();
    correct as f64 / schema.len() as f64
}

/// Per-turn relative slot accuracy: correctness over the union of slots
/// mentioned in gold or prediction. `None` when the union is empty.
pub fn turn_relative_slot_accuracy(turn: &AlignedTurn, none_marker: &str) -> Option<f64> {
    let mut union: BTreeSet<(String, String)> = BTreeSet::new();
    for t in turn.gold.iter() {
        union.insert((t.domain.clone(), t.slot.clone()));
    }
    if let Some(pred) = turn.pred {
        for t in pred.iter() {
            union.insert((t.domain.clone(), t.slot.clone()));
        }
    }
    if union.is_empty() {
        return None;
    }
    let correct = union
        .iter()
        .filter(|key| {
            value_or_none(Some(turn.gold), key, none_marker)
                == value_or_none(turn.pred, key, none_marker)
        })
        .count();
    Some(correct as f64 / union.len() as f64)
}

/// Mean relative slot accuracy over turns with a non-empty union.
pub fn relative_slot_accuracy(turns: &[AlignedTurn], none_marker: &str) -> Option<f64> {
    let defined: Vec<f64> = turns
        .iter()
        .filter_map(|t| turn_relative_slot_accuracy(t, none_marker))
        .collect();
    if defined.is_empty() {
        return None;
    }
    Some(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Classification of one predicted triple absent from the gold state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    /// Gold holds the same slot and value under another domain.
    Domain,
    /// Gold holds the same value under another slot of the same domain.
    SlotMeta,
    /// Gold holds another value for the same domain-slot.
    Value,
    /// No gold triple explains the prediction.
    Extra,
}

/// Precedence chain: domain, then slot-meta, then value, else extra.
/// Returns `None` when the triple is correct (present in gold).
pub fn classify_triple(gold: &BeliefState, triple: &BeliefTriple) -> Option<MismatchKind> {
    if gold.contains(triple) {
        return None;
    }
    if gold
        .iter()
        .any(|g| g.domain != triple.domain && g.slot == triple.slot && g.value == triple.value)
    {
        return Some(MismatchKind::Domain);
    }
    if gold
        .iter()
        .any(|g| g.domain == triple.domain && g.slot != triple.slot && g.value == triple.value)
    {
        return Some(MismatchKind::SlotMeta);
    }
    if gold
        .iter()
        .any(|g| g.domain == triple.domain && g.slot == triple.slot && g.value != triple.value)
    {
        return Some(MismatchKind::Value);
    }
    Some(MismatchKind::Extra)
}

/// Disjoint mismatch counts plus separately reported misses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MismatchCounts {
    pub domain_mismatch: usize,
    pub slot_meta_mismatch: usize,
    pub value_mismatch: usize,
    /// Predicted triples no gold triple explains.
    pub unclassified_extra: usize,
    /// Gold triples whose (domain, slot) the prediction does not mention.
    pub missed_gold: usize,
    /// Gold turns with no prediction record at all.
    pub missing_prediction_turns: usize,
}

impl MismatchCounts {
    pub fn total_mismatches(&self) -> usize {
        self.domain_mismatch + self.slot_meta_mismatch + self.value_mismatch
    }

    pub fn is_clean(&self) -> bool {
        self.total_mismatches() == 0
            && self.unclassified_extra == 0
            && self.missed_gold == 0
            && self.missing_prediction_turns == 0
    }
}

/// Classify every predicted triple absent from gold, across all turns.
pub fn classify_mismatches(turns: &[AlignedTurn]) -> MismatchCounts {
    let mut counts = MismatchCounts::default();
    for turn in turns {
        if turn.pred.is_none() {
            counts.missing_prediction_turns += 1;
        }
        if let Some(pred) = turn.pred {
            for triple in pred.iter() {
                match classify_triple(turn.gold, triple) {
                    None => {}
                    Some(MismatchKind::Domain) => counts.domain_mismatch += 1,
                    Some(MismatchKind::SlotMeta) => counts.slot_meta_mismatch += 1,
                    Some(MismatchKind::Value) => counts.value_mismatch += 1,
                    Some(MismatchKind::Extra) => counts.unclassified_extra += 1,
                }
            }
        }
        for g in turn.gold.iter() {
            let mentioned = turn
                .pred
                .map(|p| p.get(&g.domain, &g.slot).is_some())
                .unwrap_or(false);
            if !mentioned {
                counts.missed_gold += 1;
            }
        }
    }
    counts
}

/// How per-domain slices are selected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainScope {
    /// Turns of dialogues containing the domain, states filtered to it.
    #[default]
    StateFiltered,
    /// Turns of dialogues containing the domain, full states.
    DialogueLevel,
}

impl std::str::FromStr for DomainScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state-filtered" => Ok(DomainScope::StateFiltered),
            "dialogue-level" => Ok(DomainScope::DialogueLevel),
            other => Err(Error::Config(format!("unknown domain scope `{other}`"))),
        }
    }
}

/// Aggregate metrics over a set of turns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub turns: usize,
    pub jga: f64,
    pub sa: f64,
    /// Mean over turns with a non-empty mentioned-slot union; `null` when no
    /// turn defines it.
    pub rsa: Option<f64>,
    pub rsa_defined_turns: usize,
}

/// Per-turn metric records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TurnMetrics {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub jga_hit: bool,
    pub sa: f64,
    pub rsa: Option<f64>,
}

/// Full evaluation output.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    /// `null` when the evaluation saw zero turns.
    pub overall: Option<MetricsSummary>,
    /// Keyed by experiment domain; domains with no turns are omitted.
    pub per_domain: BTreeMap<String, MetricsSummary>,
    pub domain_scope: DomainScope,
    pub mismatches: MismatchCounts,
    pub missing_prediction_turns: usize,
    pub per_turn: Vec<TurnMetrics>,
    pub warnings: Vec<String>,
}

fn summarize(turns: &[AlignedTurn], schema: &SlotSchema) -> Option<(MetricsSummary, Vec<String>)> {
    if turns.is_empty() {
        return None;
    }
    let jga = joint_goal_accuracy(turns).expect("non-empty");
    let (sa, warnings) = slot_accuracy(turns, schema);
    let rsa_values: Vec<f64> = turns
        .iter()
        .filter_map(|t| turn_relative_slot_accuracy(t, schema.none_marker()))
        .collect();
    let rsa = if rsa_values.is_empty() {
        None
    } else {
        Some(rsa_values.iter().sum::<f64>() / rsa_values.len() as f64)
    };
    Some((
        MetricsSummary {
            turns: turns.len(),
            jga,
            sa: sa.expect("non-empty"),
            rsa,
            rsa_defined_turns: rsa_values.len(),
        },
        warnings,
    ))
}

/// Metrics for one domain per Table-2 conventions. `None` when no dialogue
/// contains the domain (undefined, not zero). Errors on unknown domains.
pub fn per_domain_report(
    turns: &[AlignedTurn],
    domain: &str,
    schema: &SlotSchema,
    scope: DomainScope,
) -> Result<Option<MetricsSummary>> {
    if !is_experiment_domain(domain) {
        return Err(Error::Metrics(format!(
            "unknown domain `{domain}`: expected one of {:?}",
            crate::corpus::EXPERIMENT_DOMAINS
        )));
    }
    let slice: Vec<&AlignedTurn> = turns
        .iter()
        .filter(|t| t.domains.contains(domain))
        .collect();
    if slice.is_empty() {
        return Ok(None);
    }
    match scope {
        DomainScope::DialogueLevel => {
            let owned: Vec<AlignedTurn> = slice.into_iter().cloned().collect();
            Ok(summarize(&owned, schema).map(|(s, _)| s))
        }
        DomainScope::StateFiltered => {
            let domain_schema = schema.restricted_to(domain).unwrap_or_else(|| {
                SlotSchema::from_pairs(
                    [(domain.to_string(), "none".to_string())],
                    schema.none_marker().to_string(),
                )
                .expect("fallback schema is valid")
            });
            let filtered: Vec<(BeliefState, Option<BeliefState>)> = slice
                .iter()
                .map(|t| {
                    (
                        t.gold.filtered_to_domain(domain),
                        t.pred.map(|p| p.filtered_to_domain(domain)),
                    )
                })
                .collect();
            let views: Vec<AlignedTurn> = slice
                .iter()
                .zip(&filtered)
                .map(|(t, (gold, pred))| AlignedTurn {
                    dialogue_id: t.dialogue_id,
                    turn_index: t.turn_index,
                    domains: t.domains,
                    gold,
                    pred: pred.as_ref(),
                })
                .collect();
            Ok(summarize(&views, &domain_schema).map(|(s, _)| s))
        }
    }
}

/// Evaluate a prediction set against a gold corpus.
pub fn evaluate(
    dialogues: &[Dialogue],
    predictions: &[PredictionRecord],
    schema: &SlotSchema,
    scope: DomainScope,
) -> Result<MetricsReport> {
    let (turns, mut warnings) = align(dialogues, predictions);
    let missing = turns.iter().filter(|t| t.pred.is_none()).count();
    if missing > 0 {
        warnings.push(format!(
            "{missing} gold turn(s) have no prediction record and score as misses"
        ));
    }

    let overall = summarize(&turns, schema).map(|(summary, mut sa_warnings)| {
        warnings.append(&mut sa_warnings);
        summary
    });

    let per_turn: Vec<TurnMetrics> = turns
        .iter()
        .map(|t| TurnMetrics {
            dialogue_id: t.dialogue_id.to_string(),
            turn_index: t.turn_index,
            jga_hit: jga_hit(t),
            sa: turn_slot_accuracy(t, schema, &mut BTreeSet::new()),
            rsa: turn_relative_slot_accuracy(t, schema.none_marker()),
        })
        .collect();

    let mut per_domain = BTreeMap::new();
    for domain in crate::corpus::EXPERIMENT_DOMAINS {
        if let Some(summary) = per_domain_report(&turns, domain, schema, scope)? {
            per_domain.insert(domain.to_string(), summary);
        }
    }

    Ok(MetricsReport {
        overall,
        per_domain,
        domain_scope: scope,
        mismatches: classify_mismatches(&turns),
        missing_prediction_turns: missing,
        per_turn,
        warnings,
    })
}
