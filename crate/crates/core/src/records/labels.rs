//! Stage label files: one token per 30-s epoch, one epoch per line.

use std::fmt::Write as _;
use std::path::Path;

use super::RecordError;
use crate::staging::{RawHypnogram, RawStage};

pub fn parse_labels(text: &str) -> Result<RawHypnogram, RecordError> {
    let stages = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let token = line.trim();
            token.parse::<RawStage>().map_err(|_| RecordError::UnknownToken {
                line: i + 1,
                token: token.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawHypnogram::new(stages))
}

/// Reads a label file. `UNSCORED` epochs come back masked invalid.
pub fn read_labels(path: impl AsRef<Path>) -> Result<RawHypnogram, RecordError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    parse_labels(&text)
}

pub fn write_labels(path: impl AsRef<Path>, stages: &[RawStage]) -> Result<(), RecordError> {
    let path = path.as_ref();
    let mut text = String::with_capacity(stages.len() * 3);
    for s in stages {
        writeln!(text, "{s}").unwrap();
    }
    std::fs::write(path, text).map_err(|e| RecordError::io(path, e))
}
