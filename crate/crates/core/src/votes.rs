//! Forced-choice vote records and their JSONL encoding.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::sampling::Pair;

/// One forced-choice judgment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    #[serde(default)]
    pub vote_id: u64,
    pub worker_id: String,
    pub set_id: String,
    pub pair: Pair,
    pub left_item: usize,
    pub choice: usize,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
    /// Milliseconds spent on the page.
    #[serde(default)]
    pub duration: u64,
}

impl VoteRecord {
    /// The item that was not chosen.
    pub fn loser(&self) -> usize {
        if self.choice == self.pair.0 {
            self.pair.1
        } else {
            self.pair.0
        }
    }

    pub fn choice_is_valid(&self) -> bool {
        let (i, j) = self.pair;
        i != j && (self.choice == i || self.choice == j) && (self.left_item == i || self.left_item == j)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VoteIoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn read_jsonl(reader: impl Read) -> Result<Vec<VoteRecord>, VoteIoError> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| VoteIoError::Parse { line: k + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl(mut writer: impl Write, votes: &[VoteRecord]) -> Result<(), VoteIoError> {
    for v in votes {
        serde_json::to_writer(&mut writer, v).map_err(|e| VoteIoError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<std::path::Path>) -> Result<Vec<VoteRecord>, VoteIoError> {
    read_jsonl(std::fs::File::open(path)?)
}

pub fn save_jsonl(path: impl AsRef<std::path::Path>, votes: &[VoteRecord]) -> Result<(), VoteIoError> {
    write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?), votes)
}
