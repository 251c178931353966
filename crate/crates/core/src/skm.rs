//! Selective knowledge masking.
//!
//! Every non-special token starts at the origin masking probability; tokens
//! covered by a matched entity word or phrase are raised to the select
//! probability. Masking is decided per word/phrase unit, never per subword,
//! so a selected unit masks all of its positions. All draws are keyed and
//! counter-based: output is a pure function of (corpus, entities, config,
//! vocabulary) regardless of parallelism degree.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::entity::EntitySet;
use crate::error::{Error, Result};
use crate::rng::{Stream, StreamKey};
use crate::tokenizer::{tokenize_instances, InstanceOptions, TokenizedTurn, Vocabulary, MASK};

/// Mask-token / random-token / keep split applied at masked positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPolicy {
    pub mask_token: f64,
    pub random_token: f64,
    pub keep: f64,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            mask_token: 0.8,
            random_token: 0.1,
            keep: 0.1,
        }
    }
}

impl ReplacementPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("mask_token", self.mask_token),
            ("random_token", self.random_token),
            ("keep", self.keep),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Masking(format!(
                    "replacement probability `{name}` = {p} is outside [0, 1]"
                )));
            }
        }
        let sum = self.mask_token + self.random_token + self.keep;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Masking(format!(
                "replacement probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Masking probabilities and the global seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    pub prob_origin: f64,
    pub prob_select: f64,
    #[serde(default)]
    pub replacement: ReplacementPolicy,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            prob_origin: 0.2,
            prob_select: 0.4,
            replacement: ReplacementPolicy::default(),
            seed: 42,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("prob_origin", self.prob_origin),
            ("prob_select", self.prob_select),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Masking(format!(
                    "`{name}` = {p} is outside [0, 1]"
                )));
            }
        }
        if self.prob_origin > self.prob_select {
            return Err(Error::Masking(format!(
                "prob_origin ({}) must not exceed prob_select ({}): selected \
                 knowledge is masked at least as often as ordinary text",
                self.prob_origin, self.prob_select
            )));
        }
        self.replacement.validate()
    }
}

/// What a sampling unit covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    /// A matched multi-word phrase entity.
    Phrase,
    /// A matched single-word entity.
    EntityWord,
    /// Any other word.
    OrdinaryWord,
}

impl UnitKind {
    pub fn is_entity(self) -> bool {
        !matches!(self, UnitKind::OrdinaryWord)
    }
}

/// One Bernoulli sampling unit: a phrase span or a single word, with the
/// token range it owns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskUnit {
    pub kind: UnitKind,
    /// Word-index range (half-open) in the instance's word list.
    pub word_range: (usize, usize),
    /// Token-index range (half-open) covering all subwords of the unit.
    pub token_range: (usize, usize),
    pub probability: f64,
}

/// Entity matches and per-token masking probabilities for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchLayout {
    /// Non-overlapping, sorted word-index ranges matched against phrases.
    pub phrase_spans: Vec<(usize, usize)>,
    /// Word indices matched against word entities, outside phrase spans.
    pub entity_words: Vec<usize>,
    /// Per-token probability: 0 on specials, else origin or select.
    pub probabilities: Vec<f64>,
    /// Sampling units ordered by first word index.
    pub units: Vec<MaskUnit>,
}

/// Hash-backed lookup over an entity set, reusable across instances.
pub struct EntityMatcher {
    words: HashSet<String>,
    phrases: HashSet<String>,
    max_phrase_words: usize,
}

impl EntityMatcher {
    pub fn new(entities: &EntitySet) -> Self {
        let phrases: HashSet<String> = entities.phrases().map(|p| p.to_string()).collect();
        let max_phrase_words = phrases
            .iter()
            .map(|p| p.split_whitespace().count())
            .max()
            .unwrap_or(0);
        Self {
            words: entities.words().map(|w| w.to_string()).collect(),
            phrases,
            max_phrase_words,
        }
    }

    /// Leftmost-longest phrase matching first, word matching on the rest.
    pub fn match_layout(&self, turn: &TokenizedTurn, cfg: &MaskingConfig) -> MatchLayout {
        let words = &turn.source_words;
        let n_words = words.len();

        let mut phrase_spans: Vec<(usize, usize)> = Vec::new();
        if self.max_phrase_words >= 2 {
            let mut i = 0usize;
            while i < n_words {
                let mut advanced = false;
                let longest = self.max_phrase_words.min(n_words - i);
                for k in (2..=longest).rev() {
                    let candidate = words[i..i + k].join(" ");
                    if self.phrases.contains(&candidate) {
                        phrase_spans.push((i, i + k));
                        i += k;
                        advanced = true;
                        break;
                    }
                }
                if !advanced {
                    i += 1;
                }
            }
        }

        let mut in_phrase = vec![false; n_words];
        for &(s, e) in &phrase_spans {
            for flag in in_phrase.iter_mut().take(e).skip(s) {
                *flag = true;
            }
        }

        let entity_words: Vec<usize> = (0..n_words)
            .filter(|&i| !in_phrase[i] && self.words.contains(&words[i]))
            .collect();
        let entity_word_set: HashSet<usize> = entity_words.iter().copied().collect();

        let mut probabilities = vec![0.0f64; turn.tokens.len()];
        let mut units: Vec<MaskUnit> = Vec::with_capacity(n_words);
        let mut span_iter = phrase_spans.iter().peekable();
        let mut i = 0usize;
        while i < n_words {
            if let Some(&&(s, e)) = span_iter.peek() {
                if s == i {
                    let token_range = (turn.word_boundaries[s].0, turn.word_boundaries[e - 1].1);
                    units.push(MaskUnit {
                        kind: UnitKind::Phrase,
                        word_range: (s, e),
                        token_range,
                        probability: cfg.prob_select,
                    });
                    for pos in token_range.0..token_range.1 {
                        probabilities[pos] = cfg.prob_select;
                    }
                    span_iter.next();
                    i = e;
                    continue;
                }
            }
            let kind = if entity_word_set.contains(&i) {
                UnitKind::EntityWord
            } else {
                UnitKind::OrdinaryWord
            };
            let probability = match kind {
                UnitKind::OrdinaryWord => cfg.prob_origin,
                _ => cfg.prob_select,
            };
            let token_range = turn.word_boundaries[i];
            units.push(MaskUnit {
                kind,
                word_range: (i, i + 1),
                token_range,
                probability,
            });
            for pos in token_range.0..token_range.1 {
                probabilities[pos] = probability;
            }
            i += 1;
        }

        MatchLayout {
            phrase_spans,
            entity_words,
            probabilities,
            units,
        }
    }
}

/// Match an instance against an entity set. Convenience wrapper; batch
/// callers should build one [`EntityMatcher`] and reuse it.
pub fn match_entities(
    turn: &TokenizedTurn,
    entities: &EntitySet,
    cfg: &MaskingConfig,
) -> MatchLayout {
    EntityMatcher::new(entities).match_layout(turn, cfg)
}

/// One Bernoulli draw per unit, keyed by (seed, dialogue id, turn index,
/// unit ordinal). A unit is selected iff its fixed uniform draw falls below
/// its probability, so raising a probability never deselects a unit.
pub fn select_masks(layout: &MatchLayout, cfg: &MaskingConfig, key: StreamKey) -> Vec<bool> {
    debug_assert_eq!(cfg.seed, key.seed);
    layout
        .units
        .iter()
        .enumerate()
        .map(|(ordinal, unit)| key.uniform(Stream::UnitSelect, ordinal as u64) < unit.probability)
        .collect()
}

/// Kind tag carried by a span record in the emitted corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Word,
    Phrase,
}

/// Token range of a matched entity unit, masked or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

/// A masked-LM training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub input_tokens: Vec<String>,
    /// Original token at masked positions, `null` (ignore) elsewhere.
    pub labels: Vec<Option<String>>,
    pub mask_flags: Vec<bool>,
    /// Matched entity units; every record is masked atomically or not at all.
    pub span_records: Vec<SpanRecord>,
}

/// Corrupt masked positions per the replacement policy and attach labels.
pub fn apply_replacement(
    turn: &TokenizedTurn,
    layout: &MatchLayout,
    decisions: &[bool],
    cfg: &MaskingConfig,
    vocab: &Vocabulary,
    key: StreamKey,
) -> MaskedExample {
    assert_eq!(decisions.len(), layout.units.len());
    let non_special = vocab.non_special_ids();
    let mut input_tokens = turn.tokens.clone();
    let mut labels: Vec<Option<String>> = vec![None; turn.tokens.len()];
    let mut mask_flags = vec![false; turn.tokens.len()];

    for (unit, &selected) in layout.units.iter().zip(decisions) {
        if !selected {
            continue;
        }
        for pos in unit.token_range.0..unit.token_range.1 {
            labels[pos] = Some(turn.tokens[pos].clone());
            mask_flags[pos] = true;
            let r = key.uniform(Stream::Replacement, pos as u64);
            if r < cfg.replacement.mask_token {
                input_tokens[pos] = MASK.to_string();
            } else if r < cfg.replacement.mask_token + cfg.replacement.random_token {
                let id = non_special[key.index(Stream::RandomToken, pos as u64, non_special.len())];
                input_tokens[pos] = vocab
                    .token(id)
                    .expect("non-special id is in vocabulary")
                    .to_string();
            }
            // else: keep the original token.
        }
    }

    let span_records = layout
        .units
        .iter()
        .filter(|u| u.kind.is_entity())
        .map(|u| SpanRecord {
            start: u.token_range.0,
            end: u.token_range.1,
            kind: match u.kind {
                UnitKind::Phrase => SpanKind::Phrase,
                _ => SpanKind::Word,
            },
        })
        .collect();

    MaskedExample {
        dialogue_id: turn.dialogue_id.clone(),
        turn_index: turn.turn_index,
        input_tokens,
        labels,
        mask_flags,
        span_records,
    }
}

/// Full single-instance path: match, select, replace.
pub fn mask_instance(
    turn: &TokenizedTurn,
    matcher: &EntityMatcher,
    cfg: &MaskingConfig,
    vocab: &Vocabulary,
) -> MaskedExample {
    let key = StreamKey::new(cfg.seed, &turn.dialogue_id, turn.turn_index);
    let layout = matcher.match_layout(turn, cfg);
    let decisions = select_masks(&layout, cfg, key);
    apply_replacement(turn, &layout, &decisions, cfg, vocab, key)
}

/// Emission statistics: token- and unit-level realized masking rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionStats {
    pub instances: usize,
    pub tokens: usize,
    /// Non-special token positions.
    pub maskable_tokens: usize,
    /// Positions carrying the select probability.
    pub entity_tokens: usize,
    pub masked_tokens: usize,
    pub masked_entity_tokens: usize,
    pub masked_ordinary_tokens: usize,
    pub entity_units: usize,
    pub selected_entity_units: usize,
    pub ordinary_units: usize,
    pub selected_ordinary_units: usize,
    pub entity_token_share: Option<f64>,
    pub mask_rate_overall: Option<f64>,
    pub mask_rate_entity: Option<f64>,
    pub mask_rate_ordinary: Option<f64>,
    pub unit_rate_entity: Option<f64>,
    pub unit_rate_ordinary: Option<f64>,
}

impl EmissionStats {
    fn absorb(&mut self, other: &EmissionStats) {
        self.instances += other.instances;
        self.tokens += other.tokens;
        self.maskable_tokens += other.maskable_tokens;
        self.entity_tokens += other.entity_tokens;
        self.masked_tokens += other.masked_tokens;
        self.masked_entity_tokens += other.masked_entity_tokens;
        self.masked_ordinary_tokens += other.masked_ordinary_tokens;
        self.entity_units += other.entity_units;
        self.selected_entity_units += other.selected_entity_units;
        self.ordinary_units += other.ordinary_units;
        self.selected_ordinary_units += other.selected_ordinary_units;
    }

    fn finalize(&mut self) {
        fn rate(num: usize, den: usize) -> Option<f64> {
            (den > 0).then(|| num as f64 / den as f64)
        }
        self.entity_token_share = rate(self.entity_tokens, self.maskable_tokens);
        self.mask_rate_overall = rate(self.masked_tokens, self.maskable_tokens);
        self.mask_rate_entity = rate(self.masked_entity_tokens, self.entity_tokens);
        self.mask_rate_ordinary = rate(
            self.masked_ordinary_tokens,
            self.maskable_tokens - self.entity_tokens,
        );
        self.unit_rate_entity = rate(self.selected_entity_units, self.entity_units);
        self.unit_rate_ordinary = rate(self.selected_ordinary_units, self.ordinary_units);
    }
}

fn instance_stats(layout: &MatchLayout, decisions: &[bool], example: &MaskedExample) -> EmissionStats {
    let mut s = EmissionStats {
        instances: 1,
        tokens: example.input_tokens.len(),
        ..Default::default()
    };
    for unit in &layout.units {
        let width = unit.token_range.1 - unit.token_range.0;
        s.maskable_tokens += width;
        if unit.kind.is_entity() {
            s.entity_tokens += width;
            s.entity_units += 1;
        } else {
            s.ordinary_units += 1;
        }
    }
    for (unit, &selected) in layout.units.iter().zip(decisions) {
        if !selected {
            continue;
        }
        let width = unit.token_range.1 - unit.token_range.0;
        s.masked_tokens += width;
        if unit.kind.is_entity() {
            s.masked_entity_tokens += width;
            s.selected_entity_units += 1;
        } else {
            s.masked_ordinary_tokens += width;
            s.selected_ordinary_units += 1;
        }
    }
    s
}

/// Tokenize, mask, and stream a whole corpus as JSONL. Dialogues are
/// processed in parallel; file order follows corpus order and the keyed
/// draws make the bytes independent of thread count.
pub fn emit_corpus(
    dialogues: &[Dialogue],
    entities: &EntitySet,
    cfg: &MaskingConfig,
    vocab: &Vocabulary,
    instance_opts: &InstanceOptions,
    out_path: &Path,
) -> Result<EmissionStats> {
    cfg.validate()?;
    instance_opts.validate()?;
    let file = fs::File::create(out_path).map_err(|source| Error::Io {
        path: out_path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);

    let matcher = EntityMatcher::new(entities);
    let per_dialogue: Vec<(Vec<u8>, EmissionStats)> = dialogues
        .par_iter()
        .map(|dialogue| {
            let mut bytes = Vec::new();
            let mut stats = EmissionStats::default();
            for turn in tokenize_instances(dialogue, vocab, instance_opts) {
                let key = StreamKey::new(cfg.seed, &turn.dialogue_id, turn.turn_index);
                let layout = matcher.match_layout(&turn, cfg);
                let decisions = select_masks(&layout, cfg, key);
                let example = apply_replacement(&turn, &layout, &decisions, cfg, vocab, key);
                stats.absorb(&instance_stats(&layout, &decisions, &example));
                let line =
                    serde_json::to_string(&example).expect("example serialization cannot fail");
                bytes.extend_from_slice(line.as_bytes());
                bytes.push(b'\n');
            }
            (bytes, stats)
        })
        .collect();

    let mut total = EmissionStats::default();
    for (bytes, stats) in &per_dialogue {
        writer.write_all(bytes).map_err(|source| Error::Io {
            path: out_path.to_path_buf(),
            source,
        })?;
        total.absorb(stats);
    }
    writer.flush().map_err(|source| Error::Io {
        path: out_path.to_path_buf(),
        source,
    })?;
    total.finalize();
    Ok(total)
}

pub fn read_masked_jsonl(path: &Path) -> Result<Vec<MaskedExample>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut examples = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: MaskedExample = serde_json::from_str(&line).map_err(|e| {
            Error::Masking(format!(
                "{}:{}: malformed example: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        examples.push(ex);
    }
    Ok(examples)
}

/// Token-level statistics recomputable from an emitted file. Unit-level
/// counts are only available for entity units (ordinary word boundaries are
/// not stored in the file format).
#[derive(Clone, Debug, Default, Serialize)]
pub struct FileStats {
    pub instances: usize,
    pub tokens: usize,
    pub maskable_tokens: usize,
    pub entity_tokens: usize,
    pub masked_tokens: usize,
    pub masked_entity_tokens: usize,
    pub masked_ordinary_tokens: usize,
    pub entity_units: usize,
    pub selected_entity_units: usize,
    pub mask_rate_overall: Option<f64>,
    pub mask_rate_entity: Option<f64>,
    pub mask_rate_ordinary: Option<f64>,
    pub unit_rate_entity: Option<f64>,
}

pub fn file_stats(examples: &[MaskedExample]) -> FileStats {
    let mut s = FileStats {
        instances: examples.len(),
        ..Default::default()
    };
    for ex in examples {
        s.tokens += ex.input_tokens.len();
        let mut entity_pos = vec![false; ex.input_tokens.len()];
        for rec in &ex.span_records {
            s.entity_units += 1;
            if ex.mask_flags[rec.start..rec.end].iter().all(|&f| f) {
                s.selected_entity_units += 1;
            }
            for p in rec.start..rec.end {
                entity_pos[p] = true;
            }
        }
        for (i, tok) in ex.input_tokens.iter().enumerate() {
            let special = !ex.mask_flags[i]
                && matches!(tok.as_str(), "[CLS]" | "[SEP]" | "[PAD]")
                && !entity_pos[i];
            if special {
                continue;
            }
            s.maskable_tokens += 1;
            if entity_pos[i] {
                s.entity_tokens += 1;
            }
            if ex.mask_flags[i] {
                s.masked_tokens += 1;
                if entity_pos[i] {
                    s.masked_entity_tokens += 1;
                } else {
                    s.masked_ordinary_tokens += 1;
                }
            }
        }
    }
    fn rate(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }
    s.mask_rate_overall = rate(s.masked_tokens, s.maskable_tokens);
    s.mask_rate_entity = rate(s.masked_entity_tokens, s.entity_tokens);
    s.mask_rate_ordinary = rate(s.masked_ordinary_tokens, s.maskable_tokens - s.entity_tokens);
    s.unit_rate_entity = rate(s.selected_entity_units, s.entity_units);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BeliefState, Turn};
    use crate::entity::EntitySet;
    use crate::tokenizer::{tokenize_turn, CLS, PAD, SEP, UNK};

    fn vocab() -> Vocabulary {
        let tokens = [
            PAD, UNK, CLS, SEP, MASK, "i", "want", "a", "cheap", "restaurant", "to", "stan",
            "##sted", "airport", "hi", "nusha",
        ];
        Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn entities(words: &[&str], phrases: &[&str]) -> EntitySet {
        let mut set = EntitySet::default();
        for w in words {
            set.insert_word(w.to_string(), "ontology");
        }
        for p in phrases {
            set.insert_phrase(p.to_string(), "ontology");
        }
        set
    }

    fn instance(user: &str) -> TokenizedTurn {
        let turn = Turn {
            turn_index: 0,
            system_utterance: String::new(),
            user_utterance: user.into(),
            gold_state: BeliefState::default(),
        };
        tokenize_turn(&turn, "D1", &vocab(), &InstanceOptions::default())
    }

    #[test]
    fn word_matches_raise_probability_to_select() {
        let cfg = MaskingConfig::default();
        let turn = instance("i want a cheap restaurant");
        let layout = match_entities(&turn, &entities(&["cheap", "restaurant"], &[]), &cfg);
        // Word positions: tokens are [CLS] [SEP] i want a cheap restaurant [SEP]
        let word_probs: Vec<f64> = turn
            .word_boundaries
            .iter()
            .map(|&(s, _)| layout.probabilities[s])
            .collect();
        assert_eq!(word_probs, [0.2, 0.2, 0.2, 0.4, 0.4]);
        // Specials carry probability 0.
        for pos in turn.special_positions() {
            assert_eq!(layout.probabilities[pos], 0.0);
        }
        assert_eq!(layout.entity_words, [3, 4]);
        assert!(layout.phrase_spans.is_empty());
    }

    #[test]
    fn phrase_match_takes_precedence_over_words() {
        let cfg = MaskingConfig::default();
        let turn = instance("to stansted airport");
        let set = entities(&["stansted", "airport"], &["stansted airport"]);
        let layout = match_entities(&turn, &set, &cfg);
        assert_eq!(layout.phrase_spans, [(1, 3)]);
        // Inside the span no word-level match is recorded.
        assert!(layout.entity_words.is_empty());
        let phrase_unit = layout
            .units
            .iter()
            .find(|u| u.kind == UnitKind::Phrase)
            .unwrap();
        // "stansted" splits into two subwords, so the span covers 3 tokens.
        assert_eq!(phrase_unit.token_range.1 - phrase_unit.token_range.0, 3);
    }

    #[test]
    fn leftmost_longest_picks_longer_phrase() {
        let cfg = MaskingConfig::default();
        let turn = instance("to stansted airport");
        let mut set = entities(&[], &["stansted airport"]);
        set.insert_phrase("to stansted".to_string(), "ontology");
        // Leftmost wins: "to stansted" starts earlier even though both 2-word.
        let layout = match_entities(&turn, &set, &cfg);
        assert_eq!(layout.phrase_spans, [(0, 2)]);
    }

    #[test]
    fn empty_entity_set_leaves_all_words_at_origin() {
        let cfg = MaskingConfig::default();
        let turn = instance("i want a cheap restaurant");
        let layout = match_entities(&turn, &EntitySet::default(), &cfg);
        for &(s, e) in &turn.word_boundaries {
            for pos in s..e {
                assert_eq!(layout.probabilities[pos], cfg.prob_origin);
            }
        }
        assert!(layout.units.iter().all(|u| u.kind == UnitKind::OrdinaryWord));
    }

    #[test]
    fn degenerate_probabilities_select_all_or_nothing() {
        let turn = instance("i want a cheap restaurant");
        let set = entities(&["cheap", "restaurant"], &[]);
        let all = MaskingConfig {
            prob_origin: 0.0,
            prob_select: 1.0,
            ..Default::default()
        };
        let layout = match_entities(&turn, &set, &all);
        let key = StreamKey::new(all.seed, "D1", 0);
        let decisions = select_masks(&layout, &all, key);
        for (unit, decided) in layout.units.iter().zip(&decisions) {
            assert_eq!(*decided, unit.kind.is_entity());
        }

        let none = MaskingConfig {
            prob_origin: 0.0,
            prob_select: 0.0,
            ..Default::default()
        };
        let layout = match_entities(&turn, &EntitySet::default(), &none);
        let decisions = select_masks(&layout, &none, key);
        assert!(decisions.iter().all(|&d| !d));
    }

    #[test]
    fn selection_rate_tracks_probability() {
        // 100k entity words at prob_select = 0.4; tolerance 5 sigma.
        let cfg = MaskingConfig::default();
        let set = entities(&["cheap"], &[]);
        let matcher = EntityMatcher::new(&set);
        let v = vocab();
        let opts = InstanceOptions::default();
        let mut selected = 0usize;
        let mut total = 0usize;
        for d in 0..10_000u32 {
            let turn = Turn {
                turn_index: 0,
                system_utterance: String::new(),
                user_utterance: "cheap cheap cheap cheap cheap cheap cheap cheap cheap cheap"
                    .into(),
                gold_state: BeliefState::default(),
            };
            let id = format!("D{d}");
            let inst = tokenize_turn(&turn, &id, &v, &opts);
            let layout = matcher.match_layout(&inst, &cfg);
            let key = StreamKey::new(cfg.seed, &id, 0);
            for dec in select_masks(&layout, &cfg, key) {
                total += 1;
                selected += dec as usize;
            }
        }
        assert_eq!(total, 100_000);
        let rate = selected as f64 / total as f64;
        let sigma = (0.4f64 * 0.6 / total as f64).sqrt();
        assert!(
            (rate - 0.4).abs() < 5.0 * sigma,
            "rate {rate} outside 5 sigma of 0.4"
        );
    }

    #[test]
    fn full_mask_policy_replaces_every_masked_position() {
        let cfg = MaskingConfig {
            prob_origin: 1.0,
            prob_select: 1.0,
            replacement: ReplacementPolicy {
                mask_token: 1.0,
                random_token: 0.0,
                keep: 0.0,
            },
            seed: 42,
        };
        let turn = instance("i want a cheap restaurant");
        let v = vocab();
        let matcher = EntityMatcher::new(&EntitySet::default());
        let example = mask_instance(&turn, &matcher, &cfg, &v);
        for (i, flag) in example.mask_flags.iter().enumerate() {
            if *flag {
                assert_eq!(example.input_tokens[i], MASK);
                assert_eq!(example.labels[i].as_deref(), Some(turn.tokens[i].as_str()));
            } else {
                assert!(example.labels[i].is_none());
            }
        }
        // All non-special positions masked.
        for &(s, e) in &turn.word_boundaries {
            assert!(example.mask_flags[s..e].iter().all(|&f| f));
        }
    }

    #[test]
    fn no_mask_keeps_input_and_ignores_all_labels() {
        let cfg = MaskingConfig {
            prob_origin: 0.0,
            prob_select: 0.0,
            ..Default::default()
        };
        let turn = instance("i want a cheap restaurant");
        let v = vocab();
        let example = mask_instance(&turn, &EntityMatcher::new(&EntitySet::default()), &cfg, &v);
        assert_eq!(example.input_tokens, turn.tokens);
        assert!(example.labels.iter().all(|l| l.is_none()));
        assert!(example.mask_flags.iter().all(|&f| !f));
    }

    #[test]
    fn raising_prob_select_never_unmasks_entities() {
        let turn = instance("i want a cheap restaurant to stansted airport");
        let set = entities(&["cheap", "restaurant"], &["stansted airport"]);
        let matcher = EntityMatcher::new(&set);
        let key = StreamKey::new(42, "D1", 0);
        let mut previous: Option<Vec<bool>> = None;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let cfg = MaskingConfig {
                prob_origin: 0.1,
                prob_select: p,
                ..Default::default()
            };
            let layout = matcher.match_layout(&turn, &cfg);
            let decisions = select_masks(&layout, &cfg, key);
            if let Some(prev) = &previous {
                for (before, after) in prev.iter().zip(&decisions) {
                    assert!(!before || *after, "unit unmasked by raising prob_select");
                }
            }
            previous = Some(decisions);
        }
    }

    #[test]
    fn emit_is_deterministic_and_produces_stats() {
        let v = vocab();
        let set = entities(&["cheap", "restaurant"], &["stansted airport"]);
        let dialogues: Vec<Dialogue> = (0..20)
            .map(|i| Dialogue {
                dialogue_id: format!("D{i}.json"),
                domains: ["restaurant".to_string()].into_iter().collect(),
                turns: vec![
                    Turn {
                        turn_index: 0,
                        system_utterance: String::new(),
                        user_utterance: "i want a cheap restaurant".into(),
                        gold_state: BeliefState::default(),
                    },
                    Turn {
                        turn_index: 1,
                        system_utterance: "hi".into(),
                        user_utterance: "to stansted airport".into(),
                        gold_state: BeliefState::default(),
                    },
                ],
            })
            .collect();
        let cfg = MaskingConfig::default();
        let opts = InstanceOptions::default();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let s1 = emit_corpus(&dialogues, &set, &cfg, &v, &opts, &p1).unwrap();
        let s2 = emit_corpus(&dialogues, &set, &cfg, &v, &opts, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(s1, s2);
        assert_eq!(s1.instances, 40);
        assert!(s1.entity_units > 0 && s1.ordinary_units > 0);

        // File-level stats agree with emission stats on shared fields.
        let examples = read_masked_jsonl(&p1).unwrap();
        let fs_ = file_stats(&examples);
        assert_eq!(fs_.instances, s1.instances);
        assert_eq!(fs_.tokens, s1.tokens);
        assert_eq!(fs_.masked_tokens, s1.masked_tokens);
        assert_eq!(fs_.entity_tokens, s1.entity_tokens);
        assert_eq!(fs_.masked_entity_tokens, s1.masked_entity_tokens);
        assert_eq!(fs_.entity_units, s1.entity_units);
        assert_eq!(fs_.selected_entity_units, s1.selected_entity_units);
        assert_eq!(fs_.maskable_tokens, s1.maskable_tokens);
    }

    #[test]
    fn empty_corpus_emits_nothing() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let stats = emit_corpus(
            &[],
            &EntitySet::default(),
            &MaskingConfig::default(),
            &v,
            &InstanceOptions::default(),
            &path,
        )
        .unwrap();
        assert_eq!(stats.instances, 0);
        assert!(stats.mask_rate_overall.is_none());
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn unwritable_output_fails_before_work() {
        let v = vocab();
        let err = emit_corpus(
            &[],
            &EntitySet::default(),
            &MaskingConfig::default(),
            &v,
            &InstanceOptions::default(),
            Path::new("/nonexistent-dir/out.jsonl"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn config_validation_enforces_ranges_and_ordering() {
        let mut cfg = MaskingConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.prob_select = 1.5;
        assert!(cfg.validate().is_err());
        cfg.prob_select = 0.1; // below prob_origin = 0.2
        assert!(cfg.validate().is_err());
        cfg.prob_select = 0.4;
        cfg.replacement = ReplacementPolicy {
            mask_token: 0.5,
            random_token: 0.5,
            keep: 0.5,
        };
        assert!(cfg.validate().is_err());
    }
}
