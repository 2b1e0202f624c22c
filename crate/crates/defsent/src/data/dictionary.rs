//! Dictionary loading, headword filtering, and the word-level split.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use super::vocab::{word_tokens, Vocab};
use super::DataError;
use crate::rng::seeded_rng;

/// One headword/definition pair. `word_id` is meaningful only after
/// [`filter_oov`]; the loader initializes it to UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionEntry {
    pub word: String,
    pub definition: String,
    pub word_id: u32,
}

impl DefinitionEntry {
    pub fn new(word: impl Into<String>, definition: impl Into<String>) -> Self {
        DefinitionEntry {
            word: word.into(),
            definition: definition.into(),
            word_id: Vocab::UNK,
        }
    }

    /// Normalized headword key: the lowercase word tokens joined by spaces.
    /// Two surface forms of the same headword share a key.
    fn word_key(&self) -> String {
        word_tokens(&self.word).join(" ")
    }
}

/// Word-level train/dev/test partition of a dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCorpus {
    pub train: Vec<DefinitionEntry>,
    pub dev: Vec<DefinitionEntry>,
    pub test: Vec<DefinitionEntry>,
}

#[derive(Deserialize)]
struct JsonEntry {
    word: String,
    definition: String,
}

/// Loads a dictionary file. The format is auto-detected from the first
/// non-whitespace byte: `{` means JSON Lines with `word` and `definition`
/// fields, anything else means TSV `word<TAB>definition`. Blank lines are
/// skipped; a malformed line reports its 1-based line number.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Vec<DefinitionEntry>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let jsonl = text
        .bytes()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|b| b == b'{');

    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| DataError::MalformedLine {
            path: path.to_path_buf(),
            line: lineno,
            detail,
        };
        let entry = if jsonl {
            let parsed: JsonEntry =
                serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            DefinitionEntry::new(parsed.word, parsed.definition)
        } else {
            let (word, definition) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected word<TAB>definition".to_string()))?;
            if word.trim().is_empty() {
                return Err(malformed("empty headword".to_string()));
            }
            DefinitionEntry::new(word, definition)
        };
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(DataError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(entries)
}

/// Keeps exactly the entries whose headword is a single non-special
/// vocabulary token, stamping `word_id`. Order is preserved, and filtering
/// an already-filtered list changes nothing.
pub fn filter_oov(entries: &[DefinitionEntry], vocab: &Vocab) -> Vec<DefinitionEntry> {
    entries
        .iter()
        .filter_map(|entry| {
            let words = word_tokens(&entry.word);
            let [word] = words.as_slice() else {
                return None;
            };
            let id = vocab.id(word)?;
            if vocab.is_special(id) {
                return None;
            }
            let mut kept = entry.clone();
            kept.word_id = id;
            Some(kept)
        })
        .collect()
}

/// Splits a dictionary by headword: the distinct headwords are shuffled with
/// the seed and partitioned by the given ratios (dev and test sizes floor,
/// remainder to train), then every definition follows its headword. Entries
/// keep their original relative order inside each split.
pub fn split_by_word(
    entries: &[DefinitionEntry],
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<SplitCorpus, DataError> {
    const MIN_WORDS: usize = 10;
    let mut words: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for entry in entries {
        let key = entry.word_key();
        if seen.insert(key.clone()) {
            words.push(key);
        }
    }
    if words.len() < MIN_WORDS {
        return Err(DataError::TooFewHeadwords {
            found: words.len(),
            required: MIN_WORDS,
        });
    }

    let mut rng = seeded_rng(seed);
    words.shuffle(&mut rng);

    let total = u64::from(ratios.0) + u64::from(ratios.1) + u64::from(ratios.2);
    let n = words.len();
    let n_dev = (n as u64 * u64::from(ratios.1) / total) as usize;
    let n_test = (n as u64 * u64::from(ratios.2) / total) as usize;
    let n_train = n - n_dev - n_test;

    let mut assignment: HashMap<&str, u8> = HashMap::with_capacity(n);
    for (i, word) in words.iter().enumerate() {
        let split = if i < n_train {
            0
        } else if i < n_train + n_dev {
            1
        } else {
            2
        };
        assignment.insert(word.as_str(), split);
    }

    let mut corpus = SplitCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for entry in entries {
        let key = entry.word_key();
        match assignment[key.as_str()] {
            0 => corpus.train.push(entry.clone()),
            1 => corpus.dev.push(entry.clone()),
            _ => corpus.test.push(entry.clone()),
        }
    }
    Ok(corpus)
}
