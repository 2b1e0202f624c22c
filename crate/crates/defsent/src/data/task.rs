//! Evaluation task files: sentence-pair similarity and labeled sentences.

use std::path::Path;

use super::DataError;

/// A sentence pair with a human similarity score in [0, 5].
#[derive(Debug, Clone, PartialEq)]
pub struct STSPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

/// A sentence with a non-negative integer class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sentence: String,
    pub label: usize,
}

/// Loads a TSV file of `sentence_a<TAB>sentence_b<TAB>score` rows with
/// scores in [0, 5]. Blank lines are skipped; malformed rows report their
/// 1-based line number.
pub fn load_sts_file(path: impl AsRef<Path>) -> Result<Vec<STSPair>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| DataError::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            detail,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, score] = fields.as_slice() else {
            return Err(malformed(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let gold: f64 = score
            .trim()
            .parse()
            .map_err(|_| malformed(format!("score {score:?} is not a number")))?;
        if !(0.0..=5.0).contains(&gold) {
            return Err(malformed(format!("score {gold} outside [0, 5]")));
        }
        pairs.push(STSPair {
            sentence_a: a.to_string(),
            sentence_b: b.to_string(),
            gold,
        });
    }
    if pairs.is_empty() {
        return Err(DataError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(pairs)
}

/// Loads a TSV file of `label<TAB>sentence` rows with non-negative integer
/// labels.
pub fn load_classification_file(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| DataError::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            detail,
        };
        let (label, sentence) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected label<TAB>sentence".to_string()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| malformed(format!("label {label:?} is not a non-negative integer")))?;
        rows.push(LabeledSentence {
            sentence: sentence.to_string(),
            label,
        });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(rows)
}
