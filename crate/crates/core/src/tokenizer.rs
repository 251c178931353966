//! Vocabulary-driven subword tokenization.
//!
//! Greedy longest-match-first segmentation per whitespace word, WordPiece
//! style: non-initial subwords carry the `##` continuation prefix and a word
//! with no viable segmentation degrades to a single `[UNK]`. The output keeps
//! word boundaries so masking can operate on whole words and phrases.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Turn};
use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const CONTINUATION_PREFIX: &str = "##";

const SPECIALS: [&str; 5] = [UNK, MASK, CLS, SEP, PAD];

/// An ordered token list with validated special tokens.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    special_ids: [u32; 5],
}

impl Vocabulary {
    /// Build from an ordered token list; ids follow list order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!(
                    "duplicate token `{tok}` at line {}",
                    i + 1
                )));
            }
        }
        let mut special_ids = [0u32; 5];
        for (slot, name) in SPECIALS.iter().enumerate() {
            match ids.get(*name) {
                Some(&id) => special_ids[slot] = id,
                None => {
                    return Err(Error::Vocabulary(format!(
                        "vocabulary is missing special token `{name}`"
                    )))
                }
            }
        }
        Ok(Self {
            tokens,
            ids,
            special_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn is_special(&self, token: &str) -> bool {
        SPECIALS.contains(&token)
    }

    /// Ids of the non-special tokens, for random-token replacement draws.
    pub fn non_special_ids(&self) -> Vec<u32> {
        (0..self.tokens.len() as u32)
            .filter(|id| !self.special_ids.contains(id))
            .collect()
    }

    /// Greedy longest-match-first segmentation of one whitespace word.
    /// Returns `[UNK]` alone when no full segmentation exists.
    pub fn wordpiece(&self, word: &str) -> Vec<String> {
        if word.is_empty() {
            return Vec::new();
        }
        if self.ids.contains_key(word) {
            return vec![word.to_string()];
        }
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0usize;
        while start < chars.len() {
            let mut end = chars.len();
            let mut matched = None;
            while start < end {
                let slice: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    slice
                } else {
                    format!("{CONTINUATION_PREFIX}{slice}")
                };
                if self.ids.contains_key(&candidate) {
                    matched = Some(candidate);
                    break;
                }
                end -= 1;
            }
            match matched {
                Some(piece) => {
                    pieces.push(piece);
                    start = end;
                }
                None => return vec![UNK.to_string()],
            }
        }
        pieces
    }

    /// True when any whitespace word of `text` fails to segment.
    pub fn hits_unk(&self, text: &str) -> bool {
        text.split_whitespace()
            .any(|w| self.wordpiece(w) == [UNK])
    }
}

/// Load a vocabulary file: one token per line, order defines ids.
pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let tokens: Vec<String> = text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// How dialogue text is grouped into pre-training instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceLayout {
    /// One instance per turn: `[CLS] system [SEP] user [SEP]`.
    #[default]
    TurnPair,
    /// One instance per dialogue, all utterances in turn order, each
    /// non-empty utterance as a `[SEP]`-closed segment.
    Dialogue,
}

impl std::str::FromStr for InstanceLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turn-pair" => Ok(InstanceLayout::TurnPair),
            "dialogue" => Ok(InstanceLayout::Dialogue),
            other => Err(Error::Config(format!(
                "unknown layout `{other}` (expected `turn-pair` or `dialogue`)"
            ))),
        }
    }
}

/// Instance construction options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceOptions {
    pub layout: InstanceLayout,
    /// Whether turns with an empty system utterance (turn 0) yield instances.
    pub include_empty_system: bool,
    /// Hard cap on instance length; truncation drops whole trailing words.
    pub max_tokens: usize,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            layout: InstanceLayout::default(),
            include_empty_system: true,
            max_tokens: 256,
        }
    }
}

impl InstanceOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 4 {
            return Err(Error::Config(format!(
                "max_tokens must be at least 4, got {}",
                self.max_tokens
            )));
        }
        Ok(())
    }
}

/// A tokenized instance with word-to-token alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedTurn {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub tokens: Vec<String>,
    /// Half-open token-index ranges, one per whitespace word, in order.
    pub word_boundaries: Vec<(usize, usize)>,
    /// Original words aligned with `word_boundaries`.
    pub source_words: Vec<String>,
}

impl TokenizedTurn {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token positions not covered by any word boundary ([CLS]/[SEP] framing).
    pub fn special_positions(&self) -> Vec<usize> {
        let mut covered = vec![false; self.tokens.len()];
        for &(s, e) in &self.word_boundaries {
            for flag in covered.iter_mut().take(e).skip(s) {
                *flag = true;
            }
        }
        covered
            .iter()
            .enumerate()
            .filter_map(|(i, c)| (!c).then_some(i))
            .collect()
    }
}

fn tokenize_segments(
    dialogue_id: &str,
    turn_index: u32,
    segments: &[&str],
    vocab: &Vocabulary,
    max_tokens: usize,
) -> TokenizedTurn {
    let mut tokens = vec![CLS.to_string()];
    let mut word_boundaries = Vec::new();
    let mut source_words = Vec::new();

    'segments: for seg in segments {
        for word in seg.split_whitespace() {
            let pieces = vocab.wordpiece(word);
            // Reserve room for this segment's closing [SEP].
            if tokens.len() + pieces.len() + 1 > max_tokens {
                break 'segments;
            }
            word_boundaries.push((tokens.len(), tokens.len() + pieces.len()));
            source_words.push(word.to_string());
            tokens.extend(pieces);
        }
        tokens.push(SEP.to_string());
    }
    if tokens.last().map(|t| t.as_str()) != Some(SEP) {
        tokens.push(SEP.to_string());
    }

    TokenizedTurn {
        dialogue_id: dialogue_id.to_string(),
        turn_index,
        tokens,
        word_boundaries,
        source_words,
    }
}

/// Tokenize one turn as `[CLS] system [SEP] user [SEP]`.
pub fn tokenize_turn(
    turn: &Turn,
    dialogue_id: &str,
    vocab: &Vocabulary,
    opts: &InstanceOptions,
) -> TokenizedTurn {
    tokenize_segments(
        dialogue_id,
        turn.turn_index,
        &[turn.system_utterance.as_str(), turn.user_utterance.as_str()],
        vocab,
        opts.max_tokens,
    )
}

/// Build all pre-training instances for a dialogue under the given layout.
pub fn tokenize_instances(
    dialogue: &Dialogue,
    vocab: &Vocabulary,
    opts: &InstanceOptions,
) -> Vec<TokenizedTurn> {
    match opts.layout {
        InstanceLayout::TurnPair => dialogue
            .turns
            .iter()
            .filter(|t| opts.include_empty_system || !t.system_utterance.is_empty())
            .map(|t| tokenize_turn(t, &dialogue.dialogue_id, vocab, opts))
            .collect(),
        InstanceLayout::Dialogue => {
            let segments: Vec<&str> = dialogue
                .turns
                .iter()
                .flat_map(|t| [t.system_utterance.as_str(), t.user_utterance.as_str()])
                .filter(|s| !s.is_empty())
                .collect();
            vec![tokenize_segments(
                &dialogue.dialogue_id,
                0,
                &segments,
                vocab,
                opts.max_tokens,
            )]
        }
    }
}

/// Invert tokenization: strip continuation prefixes, glue subwords, drop
/// specials. Errors on tokens outside the vocabulary.
pub fn detokenize(tokens: &[String], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for tok in tokens {
        if !vocab.contains(tok) {
            return Err(Error::Vocabulary(format!(
                "token `{tok}` not in vocabulary"
            )));
        }
        if vocab.is_special(tok) {
            continue;
        }
        if let Some(rest) = tok.strip_prefix(CONTINUATION_PREFIX) {
            out.push_str(rest);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
    }
    Ok(out)
}
