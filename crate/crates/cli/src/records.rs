//! Line-delimited JSON and plain-text helpers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use clinsum::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

const TEXT_FIELDS: [&str; 5] = ["text", "prediction", "summary", "target", "target_text"];

/// Texts to score. `.jsonl` / `.json` files hold one JSON string or object
/// per line (the first of `text`, `prediction`, `summary`, `target`,
/// `target_text` is used); other files hold one text per line.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json" | "ndjson"));
    if !jsonl {
        return Ok(raw.lines().map(str::to_string).collect());
    }
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(path, i + 1, e))?;
        let text = match &value {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Object(map) => TEXT_FIELDS
                .iter()
                .find_map(|f| map.get(*f).and_then(|v| v.as_str()).map(str::to_string)),
            _ => None,
        };
        out.push(text.ok_or_else(|| {
            parse_err(path, i + 1, format!("expected a string or an object with one of {TEXT_FIELDS:?}"))
        })?);
    }
    Ok(out)
}
