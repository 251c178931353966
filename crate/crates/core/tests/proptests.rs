//! Property tests for the spec-level invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;

use entmask::corpus::{normalize_value, BeliefState, BeliefTriple, Dialogue, Turn};
use entmask::entity::{build_entity_set, merge_entity_sets, EntitySet, EntitySourceKind, FilterConfig};
use entmask::rng::StreamKey;
use entmask::skm::{
    apply_replacement, match_entities, select_masks, EntityMatcher, MaskingConfig, UnitKind,
};
use entmask::tokenizer::{
    detokenize, tokenize_turn, InstanceOptions, Vocabulary, CLS, MASK, PAD, SEP, UNK,
};

fn letter_vocab() -> Vocabulary {
    // Every lowercase letter as initial and continuation piece: any word of
    // letters is segmentable, so round-trips are total.
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in 'a'..='z' {
        tokens.push(c.to_string());
    }
    for c in 'a'..='z' {
        tokens.push(format!("##{c}"));
    }
    // A few multi-letter pieces so greedy matching has real choices.
    for piece in ["th", "er", "on", "an", "##th", "##er", "##on", "##an", "the", "##ing"] {
        tokens.push(piece.to_string());
    }
    Vocabulary::from_tokens(tokens).unwrap()
}

fn word_strategy() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-z]{1,12}").unwrap()
}

fn words_strategy(max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(word_strategy(), 1..max)
}

fn turn_of(words: &[String]) -> Turn {
    Turn {
        turn_index: 0,
        system_utterance: String::new(),
        user_utterance: words.join(" "),
        gold_state: BeliefState::default(),
    }
}

proptest! {
    #[test]
    fn wordpiece_round_trips_segmentable_words(word in word_strategy()) {
        let vocab = letter_vocab();
        let pieces = vocab.wordpiece(&word);
        prop_assert_ne!(&pieces, &[UNK.to_string()]);
        let detok = detokenize(&pieces, &vocab).unwrap();
        prop_assert_eq!(detok, word);
    }

    #[test]
    fn greedy_match_cannot_be_extended(word in word_strategy()) {
        let vocab = letter_vocab();
        let pieces = vocab.wordpiece(&word);
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0usize;
        for (idx, piece) in pieces.iter().enumerate() {
            let bare = piece.strip_prefix("##").unwrap_or(piece);
            let len = bare.chars().count();
            // Any longer candidate at the same start position must miss.
            for extended in len + 1..=chars.len() - start {
                let slice: String = chars[start..start + extended].iter().collect();
                let candidate = if idx == 0 { slice } else { format!("##{slice}") };
                prop_assert!(!vocab.contains(&candidate),
                    "token {piece} at {start} extendable to {candidate}");
            }
            start += len;
        }
    }

    #[test]
    fn boundaries_reproduce_source_words(words in words_strategy(12)) {
        let vocab = letter_vocab();
        let turn = tokenize_turn(&turn_of(&words), "D", &vocab, &InstanceOptions::default());
        for (i, &(s, e)) in turn.word_boundaries.iter().enumerate() {
            let glued: String = turn.tokens[s..e]
                .iter()
                .map(|t| t.strip_prefix("##").unwrap_or(t))
                .collect();
            let source = &turn.source_words[i];
            prop_assert!(glued == *source || turn.tokens[s..e] == [UNK.to_string()]);
        }
    }

    #[test]
    fn normalize_is_idempotent(raw in "[ A-Za-z0-9':!?.]{0,40}") {
        let once = normalize_value(&raw);
        prop_assert_eq!(normalize_value(&once), once);
    }

    #[test]
    fn corpus_jsonl_round_trips(
        ids in proptest::collection::vec("[a-z]{3,8}", 1..4),
        values in proptest::collection::vec("[a-z]{1,10}", 1..6),
    ) {
        let dialogues: Vec<Dialogue> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| Dialogue {
                dialogue_id: format!("{id}{i}.json"),
                domains: ["hotel".to_string()].into_iter().collect(),
                turns: vec![Turn {
                    turn_index: 0,
                    system_utterance: String::new(),
                    user_utterance: values.join(" "),
                    gold_state: BeliefState::from_triples(
                        values
                            .iter()
                            .enumerate()
                            .map(|(j, v)| BeliefTriple::new("hotel", format!("slot{j}"), v)),
                    ),
                }],
            })
            .collect();
        let mut buf = Vec::new();
        entmask::corpus::write_corpus_jsonl(&dialogues, &mut buf).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), &buf).unwrap();
        let reloaded = entmask::corpus::read_corpus_jsonl(file.path()).unwrap();
        prop_assert_eq!(dialogues, reloaded);
    }

    #[test]
    fn entity_set_merge_is_commutative_associative_idempotent(
        raws_a in proptest::collection::vec("[a-z]{2,8}( [a-z]{2,8})?", 0..8),
        raws_b in proptest::collection::vec("[a-z]{2,8}( [a-z]{2,8})?", 0..8),
        raws_c in proptest::collection::vec("[a-z]{2,8}( [a-z]{2,8})?", 0..8),
    ) {
        let vocab = letter_vocab();
        let cfg = FilterConfig::default();
        let make = |raws: &[String], kind: EntitySourceKind| -> EntitySet {
            build_entity_set(kind, raws, &vocab, &cfg)
        };
        let a = make(&raws_a, EntitySourceKind::Ontology);
        let b = make(&raws_b, EntitySourceKind::SpacyFile);
        let c = make(&raws_c, EntitySourceKind::Gazetteer);

        let ab_c = merge_entity_sets([merge_entity_sets([a.clone(), b.clone()]), c.clone()]);
        let a_bc = merge_entity_sets([a.clone(), merge_entity_sets([b.clone(), c.clone()])]);
        prop_assert_eq!(&ab_c, &a_bc);

        let ba = merge_entity_sets([b.clone(), a.clone()]);
        let ab = merge_entity_sets([a.clone(), b.clone()]);
        prop_assert_eq!(&ab, &ba);

        let aa = merge_entity_sets([a.clone(), a.clone()]);
        prop_assert_eq!(&aa, &a);
    }

    #[test]
    fn no_word_entity_violates_filters(
        raws in proptest::collection::vec("[a-z0-9:']{1,8}( [a-z0-9:']{1,8}){0,2}", 0..10),
    ) {
        let vocab = letter_vocab();
        let cfg = FilterConfig::default();
        let set = build_entity_set(EntitySourceKind::Ontology, &raws, &vocab, &cfg);
        for word in set.words() {
            prop_assert!(!entmask::entity::is_time_or_number(word, &cfg), "{word}");
            prop_assert!(!cfg.is_stopword(word), "{word}");
            prop_assert!(!cfg.is_pure_punctuation(word), "{word}");
            prop_assert!(!word.contains(' '));
        }
        for phrase in set.phrases() {
            prop_assert!(phrase.split_whitespace().count() >= 2);
            for word in phrase.split_whitespace() {
                prop_assert!(!entmask::entity::is_time_or_number(word, &cfg), "{phrase}");
            }
            prop_assert!(!vocab.hits_unk(phrase), "{phrase}");
        }
    }
}

/// Build an entity set guaranteed to intersect the turn: some single words
/// plus some contiguous bigrams of the word sequence.
fn entities_over(words: &[String], pick: usize) -> EntitySet {
    let mut set = EntitySet::default();
    for w in words.iter().step_by(3).take(pick) {
        set.insert_word(w.clone(), "ontology");
    }
    for pair in words.windows(2).step_by(4).take(pick) {
        set.insert_phrase(format!("{} {}", pair[0], pair[1]), "ontology");
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn skm_probability_vector_is_sound(
        words in words_strategy(14),
        p_origin in 0.0f64..0.5,
        delta in 0.0f64..0.5,
    ) {
        let vocab = letter_vocab();
        let cfg = MaskingConfig {
            prob_origin: p_origin,
            prob_select: p_origin + delta,
            ..Default::default()
        };
        let turn = tokenize_turn(&turn_of(&words), "D", &vocab, &InstanceOptions::default());
        let entities = entities_over(&words, 3);
        let layout = match_entities(&turn, &entities, &cfg);

        // Union of matched spans/words in token space.
        let mut selected = vec![false; turn.tokens.len()];
        for &(ws, we) in &layout.phrase_spans {
            let (ts, te) = (turn.word_boundaries[ws].0, turn.word_boundaries[we - 1].1);
            for flag in selected.iter_mut().take(te).skip(ts) {
                *flag = true;
            }
        }
        for &w in &layout.entity_words {
            let (ts, te) = turn.word_boundaries[w];
            for flag in selected.iter_mut().take(te).skip(ts) {
                *flag = true;
            }
        }

        let specials: BTreeSet<usize> = turn.special_positions().into_iter().collect();
        for (pos, &p) in layout.probabilities.iter().enumerate() {
            if specials.contains(&pos) {
                prop_assert_eq!(p, 0.0);
            } else if selected[pos] {
                prop_assert_eq!(p, cfg.prob_select);
            } else {
                prop_assert_eq!(p, cfg.prob_origin);
            }
        }
    }

    #[test]
    fn skm_masking_is_atomic_and_labels_are_sound(
        words in words_strategy(14),
        seed in 0u64..1000,
    ) {
        let vocab = letter_vocab();
        let cfg = MaskingConfig { seed, ..Default::default() };
        let turn = tokenize_turn(&turn_of(&words), "D", &vocab, &InstanceOptions::default());
        let entities = entities_over(&words, 3);
        let matcher = EntityMatcher::new(&entities);
        let key = StreamKey::new(cfg.seed, "D", 0);
        let layout = matcher.match_layout(&turn, &cfg);
        let decisions = select_masks(&layout, &cfg, key);
        let example = apply_replacement(&turn, &layout, &decisions, &cfg, &vocab, key);

        // Unit atomicity, phrases included.
        for unit in &layout.units {
            let flags = &example.mask_flags[unit.token_range.0..unit.token_range.1];
            prop_assert!(flags.iter().all(|&f| f) || flags.iter().all(|&f| !f));
        }
        // Span records are exactly the entity units.
        prop_assert_eq!(
            example.span_records.len(),
            layout.units.iter().filter(|u| u.kind.is_entity()).count()
        );
        // Label soundness.
        for i in 0..turn.tokens.len() {
            prop_assert_eq!(example.labels[i].is_some(), example.mask_flags[i]);
            if let Some(label) = &example.labels[i] {
                prop_assert_eq!(label, &turn.tokens[i]);
            }
        }
        // Framing positions are never masked or rewritten.
        for i in turn.special_positions() {
            prop_assert!(!example.mask_flags[i], "framing token masked at {i}");
            prop_assert_eq!(&example.input_tokens[i], &turn.tokens[i]);
        }
        // Replacement never inserts specials other than the mask token.
        for (i, tok) in example.input_tokens.iter().enumerate() {
            if example.mask_flags[i] && tok != MASK {
                prop_assert!(!vocab.is_special(tok));
            }
        }

        // Determinism: same inputs, same output.
        let again = apply_replacement(&turn, &layout, &decisions, &cfg, &vocab, key);
        prop_assert_eq!(example, again);
    }

    #[test]
    fn skm_selection_is_monotone_in_prob_select(
        words in words_strategy(14),
        seed in 0u64..1000,
        p_low_raw in 0.1f64..0.5,
        p_high_raw in 0.5f64..0.9,
    ) {
        let vocab = letter_vocab();
        let turn = tokenize_turn(&turn_of(&words), "D", &vocab, &InstanceOptions::default());
        let entities = entities_over(&words, 3);
        let matcher = EntityMatcher::new(&entities);
        let key = StreamKey::new(seed, "D", 0);

        let low = MaskingConfig { prob_origin: 0.1, prob_select: p_low_raw, seed, ..Default::default() };
        let high = MaskingConfig { prob_origin: 0.1, prob_select: p_high_raw, seed, ..Default::default() };
        let layout_low = matcher.match_layout(&turn, &low);
        let layout_high = matcher.match_layout(&turn, &high);
        let d_low = select_masks(&layout_low, &low, key);
        let d_high = select_masks(&layout_high, &high, key);
        for ((unit, before), after) in layout_low.units.iter().zip(&d_low).zip(&d_high) {
            if unit.kind != UnitKind::OrdinaryWord {
                prop_assert!(!before || *after);
            } else {
                prop_assert_eq!(before, after);
            }
        }
    }
}
