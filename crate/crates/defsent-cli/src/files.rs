//! Small file helpers shared by the commands, all mapping failures onto
//! [`CliError`] so exit codes stay uniform.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Reads a corpus file into sentences, skipping blank lines.
pub fn read_sentences(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_lines(path)?
        .into_iter()
        .filter(|line| !line.trim().is_empty())
        .collect())
}

/// Reads a file into lines, keeping blank ones.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Creates the output directory if it does not exist yet.
pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes plain text, replacing any existing file.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a value as pretty-printed JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|err| CliError::Config {
        detail: format!("cannot serialize report: {err}"),
    })?;
    write_text(path, &format!("{text}\n"))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for row in rows {
        let line = serde_json::to_string(row).map_err(|err| CliError::Config {
            detail: format!("cannot serialize log row: {err}"),
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    write_text(path, &text)
}
