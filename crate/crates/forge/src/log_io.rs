//! JSON-lines event logs.
//!
//! Line 1 is a [`LogHeader`], then one [`MarketEvent`] per line, then a
//! trailer `{"end":{"events":N}}`. A log that stops early (no trailer, a
//! half-written line, a count mismatch) is rejected with the line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cda_core::engine::MarketEvent;
use cda_core::market::ExperimentConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FORMAT: &str = "cda-events";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    /// The configuration that produced the log, when known.
    #[serde(default)]
    pub config: Option<ExperimentConfig>,
}

impl LogHeader {
    pub fn new(config: Option<ExperimentConfig>) -> Self {
        Self { format: LOG_FORMAT.into(), version: LOG_VERSION, config }
    }
}

#[derive(Serialize, Deserialize)]
struct End {
    events: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    end: End,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl LogError {
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::Line { line, .. } => Some(*line),
            LogError::Io { .. } => None,
        }
    }
}

/// Line number of event `index` in a file written by [`write_log`].
pub fn event_line(index: usize) -> usize {
    index + 2
}

pub fn write_log(path: &Path, header: &LogHeader, events: &[MarketEvent]) -> Result<(), LogError> {
    let io = |source| LogError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    json_line(&mut w, header).map_err(io)?;
    for e in events {
        json_line(&mut w, e).map_err(io)?;
    }
    json_line(&mut w, &Trailer { end: End { events: events.len() } }).map_err(io)?;
    w.flush().map_err(io)
}

fn json_line<T: Serialize>(w: &mut impl Write, v: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(std::io::Error::other)?;
    w.write_all(b"\n")
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<MarketEvent>), LogError> {
    let file = File::open(path).map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    parse_log(BufReader::new(file))
}

pub fn parse_log(reader: impl BufRead) -> Result<(LogHeader, Vec<MarketEvent>), LogError> {
    let bad = |line: usize, message: String| LogError::Line { line, message };
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let header: LogHeader = match lines.next() {
        None => return Err(bad(1, "empty log, expected a header".into())),
        Some((n, l)) => {
            let l = l.map_err(|e| bad(n, e.to_string()))?;
            serde_json::from_str(&l).map_err(|e| bad(n, format!("bad header: {e}")))?
        }
    };
    if header.format != LOG_FORMAT || header.version != LOG_VERSION {
        return Err(bad(1, format!("unsupported log {} v{}", header.format, header.version)));
    }

    let mut events = Vec::new();
    let mut last = 1;
    for (n, l) in lines {
        let l = l.map_err(|e| bad(n, e.to_string()))?;
        last = n;
        if l.starts_with("{\"end\"") {
            let t: Trailer = serde_json::from_str(&l).map_err(|e| bad(n, format!("bad trailer: {e}")))?;
            if t.end.events != events.len() {
                return Err(bad(n, format!("trailer counts {} events, found {}", t.end.events, events.len())));
            }
            return Ok((header, events));
        }
        events.push(serde_json::from_str(&l).map_err(|e| bad(n, format!("bad event: {e}")))?);
    }
    Err(bad(last + 1, "log ends without a trailer (truncated?)".into()))
}
