//! Word-level vocabulary with five reserved special tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::DataError;

/// String forms of the reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Vocabulary mapping tokens to dense ids. Ids 0 through 4 are always the
/// special tokens PAD, UNK, CLS, SEP, MASK; regular words start at 5 in
/// frequency order (ties broken lexicographically).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    pub const MASK: u32 = 4;

    /// Id of the first non-special token.
    pub const FIRST_WORD: u32 = SPECIAL_TOKENS.len() as u32;

    /// Builds a vocabulary from an explicit token list, validating that the
    /// specials sit at ids 0 through 4 and no token repeats. This is the
    /// entry point for vocab files and checkpoint headers.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(DataError::InvalidVocab {
                detail: format!("only {} tokens, specials missing", tokens.len()),
            });
        }
        for (i, expect) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expect {
                return Err(DataError::InvalidVocab {
                    detail: format!("token {i} must be {expect}, found {:?}", tokens[i]),
                });
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(DataError::InvalidVocab {
                    detail: format!("duplicate token {tok:?}"),
                });
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < Self::FIRST_WORD
    }

    /// All tokens in id order, e.g. for serialization.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Writes the vocabulary as one token per line; the line number is the id.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for tok in &self.tokens {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    /// Reads a one-token-per-line vocabulary file.
    pub fn read_from(r: impl Read) -> Result<Self, DataError> {
        let reader = BufReader::new(r);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|source| DataError::Io {
                path: "<vocab>".into(),
                source,
            })?;
            tokens.push(line);
        }
        while tokens.last().is_some_and(|t| t.is_empty()) {
            tokens.pop();
        }
        Vocab::from_tokens(tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Vocab::read_from(file)
    }
}

/// Splits a sentence into lowercase word tokens. Token characters are
/// alphanumeric; everything else (whitespace, punctuation) separates tokens.
/// Only ASCII letters are case-folded.
pub fn word_tokens(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in sentence.chars() {
        if ch.is_alphanumeric() {
            current.push(ch.to_ascii_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Builds a vocabulary of at most `max_size` tokens (specials included) from
/// a sentence corpus: words ranked by descending frequency, ties broken
/// lexicographically.
pub fn build_vocab<I, S>(corpus: I, max_size: usize) -> Result<Vocab, DataError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size <= SPECIAL_TOKENS.len() {
        return Err(DataError::VocabTooSmall { max_size });
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sentence in corpus {
        for tok in word_tokens(sentence.as_ref()) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - SPECIAL_TOKENS.len());

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(tok, _)| tok));
    Vocab::from_tokens(tokens)
}

/// Tokenizes one sentence to ids: lowercase word tokens mapped through the
/// vocabulary (unknowns to UNK), wrapped as `CLS ... SEP`, with interior
/// tokens truncated so the total length never exceeds `max_len`.
pub fn tokenize(sentence: &str, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    assert!(max_len >= 3, "max_len must leave room for CLS, SEP, a token");
    let words = word_tokens(sentence);
    let keep = words.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(Vocab::CLS);
    for word in &words[..keep] {
        ids.push(vocab.id(word).unwrap_or(Vocab::UNK));
    }
    ids.push(Vocab::SEP);
    ids
}
