//! Line-delimited JSON helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses each non-blank line of `text` as one record, tagged with its 1-based line number.
pub fn records<R: DeserializeOwned>(text: &str) -> impl Iterator<Item = (usize, Result<R>)> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let parsed = serde_json::from_str(l).map_err(|e| Error::Malformed {
                line,
                message: e.to_string(),
            });
            (line, parsed)
        })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn to_jsonl<R: Serialize>(records: impl IntoIterator<Item = R>) -> Result<String> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r)?;
        buf.push(b'\n');
    }
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: impl IntoIterator<Item = R>) -> Result<()> {
    write_string(path, &to_jsonl(records)?)
}

pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    records(&read_to_string(path)?).map(|(_, r)| r).collect()
}

/// Writes a single record followed by a newline.
pub fn write_json<R: Serialize>(path: &Path, value: &R) -> Result<()> {
    create_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn write_json_pretty<R: Serialize>(path: &Path, value: &R) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_string(path, &text)
}

pub fn read_json<R: DeserializeOwned>(path: &Path) -> Result<R> {
    Ok(serde_json::from_str(read_to_string(path)?.trim())?)
}
