//! Recording ingestion: EDF and plain-text signals, stage label files and
//! dataset manifests.

mod edf;
mod labels;
mod manifest;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use edf::{format_field8, read_edf, write_edf, Calibration, EdfFile, EdfHeader, EdfSignalHeader};
pub use labels::{read_labels, write_labels};
pub use manifest::{load_manifest, DatasetManifest, DatasetRole, ManifestEntry};

use crate::staging::RawHypnogram;

/// Longest run of missing samples that is bridged by interpolation.
pub const MAX_INTERPOLATED_GAP_SECONDS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("channel {0:?} not found")]
    ChannelNotFound(String),
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("line {line}: unknown stage token {token:?}")]
    UnknownToken { line: usize, token: String },
    #[error("line {line}: {value:?} is not a sample value")]
    BadSample { line: usize, value: String },
    #[error("manifest {path}: {}", problems.join("; "))]
    Manifest { path: PathBuf, problems: Vec<String> },
    #[error("record {record_id}: {reason}")]
    InvalidRecord { record_id: String, reason: String },
}

impl RecordError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Unknown,
}

/// Patient covariates used by the error analysis. Every field is optional
/// because public datasets rarely carry all of them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default)]
    pub sex: Sex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ahi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ethnicity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<String>,
}

impl PatientMeta {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(age) = self.age {
            if !(age >= 18.0) {
                out.push(format!("age {age} below 18"));
            }
        }
        if let Some(ahi) = self.ahi {
            if !(ahi >= 0.0) {
                out.push(format!("negative AHI {ahi}"));
            }
        }
        if let Some(bmi) = self.bmi {
            if !(bmi > 0.0) {
                out.push(format!("non-positive BMI {bmi}"));
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.age.is_some()
            && self.sex != Sex::Unknown
            && self.ahi.is_some()
            && self.bmi.is_some()
            && self.ethnicity.is_some()
    }
}

/// One night of raw PPG.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecord {
    pub record_id: String,
    pub samples: Vec<f64>,
    pub fs: f64,
    pub meta: PatientMeta,
    /// Spans `[start, end)` in seconds that were zero-filled by gap repair.
    pub gaps: Vec<(f64, f64)>,
}

impl PpgRecord {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Checks the sampling rate and minimum length, then repairs missing
    /// samples (see [`repair_gaps`]).
    pub fn validated(mut self) -> Result<PpgRecord, RecordError> {
        let bad = |reason: String| RecordError::InvalidRecord {
            record_id: self.record_id.clone(),
            reason,
        };
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(bad(format!("sampling rate {} is not positive", self.fs)));
        }
        if (self.samples.len() as f64) < self.fs * 60.0 {
            return Err(bad(format!(
                "{} samples is shorter than one minute at {} Hz",
                self.samples.len(),
                self.fs
            )));
        }
        let (samples, gaps) = repair_gaps(&self.samples, self.fs);
        if gaps.len() == 1 && gaps[0].1 - gaps[0].0 >= self.duration() {
            return Err(bad("no finite samples".into()));
        }
        self.samples = samples;
        self.gaps.extend(gaps);
        Ok(self)
    }
}

/// Replaces non-finite samples. Runs up to
/// [`MAX_INTERPOLATED_GAP_SECONDS`] are linearly interpolated between their
/// finite neighbours (held at the edges); longer runs are zero-filled and
/// returned as `[start, end)` spans in seconds.
pub fn repair_gaps(samples: &[f64], fs: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let mut out = samples.to_vec();
    let mut spans = Vec::new();
    let max_run = (MAX_INTERPOLATED_GAP_SECONDS * fs).floor() as usize;
    let n = out.len();
    let mut i = 0;
    while i < n {
        if out[i].is_finite() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !out[i].is_finite() {
            i += 1;
        }
        let end = i;
        let left = start.checked_sub(1).map(|k| out[k]);
        let right = (end < n).then(|| out[end]);
        if end - start <= max_run && (left.is_some() || right.is_some()) {
            let (a, b) = match (left, right) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => unreachable!(),
            };
            let span = (end - start + 1) as f64;
            for (k, v) in out[start..end].iter_mut().enumerate() {
                let t = (k + 1) as f64 / span;
                *v = a + (b - a) * t;
            }
        } else {
            out[start..end].iter_mut().for_each(|v| *v = 0.0);
            spans.push((start as f64 / fs, end as f64 / fs));
        }
    }
    (out, spans)
}

/// Reads a one-column text signal. Empty fields and `NaN` become missing samples.
pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, RecordError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let v = line.trim();
            if v.is_empty() || v.eq_ignore_ascii_case("nan") {
                Ok(f64::NAN)
            } else {
                v.parse().map_err(|_| RecordError::BadSample {
                    line: i + 1,
                    value: v.to_string(),
                })
            }
        })
        .collect()
}

/// Reads raw little-endian `f64` samples.
pub fn read_signal_bin(path: impl AsRef<Path>) -> Result<Vec<f64>, RecordError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| RecordError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(RecordError::TruncatedData {
            expected: bytes.len().div_ceil(8) * 8,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Loads and validates the signal and the labels of one manifest entry.
pub fn load_entry(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
) -> Result<(PpgRecord, RawHypnogram), RecordError> {
    let signal_path = manifest.resolve(&entry.signal_path);
    let ext = signal_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let (samples, fs) = match ext.as_str() {
        "edf" => {
            let rec = read_edf(&signal_path, &entry.channel)?;
            if (rec.fs - entry.fs).abs() > 1e-6 {
                return Err(RecordError::InvalidRecord {
                    record_id: entry.record_id.clone(),
                    reason: format!("EDF says {} Hz, manifest says {} Hz", rec.fs, entry.fs),
                });
            }
            (rec.samples, rec.fs)
        }
        "csv" | "txt" => (read_signal_csv(&signal_path)?, entry.fs),
        "bin" | "f64" => (read_signal_bin(&signal_path)?, entry.fs),
        other => {
            return Err(RecordError::Unsupported(format!(
                "signal file extension {other:?}"
            )))
        }
    };
    let record = PpgRecord {
        record_id: entry.record_id.clone(),
        samples,
        fs,
        meta: entry.meta.clone(),
        gaps: Vec::new(),
    }
    .validated()?;
    let labels = read_labels(manifest.resolve(&entry.label_path))?;
    Ok((record, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_gap_is_interpolated() {
        let mut x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        for v in &mut x[10..13] {
            *v = f64::NAN;
        }
        let (y, spans) = repair_gaps(&x, 10.0);
        assert!(spans.is_empty());
        for i in 0..100 {
            assert!((y[i] - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn long_gap_is_zero_filled_and_reported() {
        let mut x = vec![1.0; 200];
        for v in &mut x[50..110] {
            *v = f64::INFINITY;
        }
        let (y, spans) = repair_gaps(&x, 10.0);
        assert_eq!(spans, vec![(5.0, 11.0)]);
        assert!(y[50..110].iter().all(|v| *v == 0.0));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn edge_gap_holds_neighbour() {
        let mut x = vec![2.0; 50];
        x[0] = f64::NAN;
        x[49] = f64::NAN;
        let (y, _) = repair_gaps(&x, 10.0);
        assert_eq!(y[0], 2.0);
        assert_eq!(y[49], 2.0);
    }

    #[test]
    fn record_must_cover_a_minute() {
        let rec = PpgRecord {
            record_id: "r".into(),
            samples: vec![0.0; 59 * 10],
            fs: 10.0,
            meta: PatientMeta::default(),
            gaps: vec![],
        };
        assert!(rec.validated().is_err());
    }

    #[test]
    fn meta_invariants() {
        let meta = PatientMeta {
            age: Some(12.0),
            ahi: Some(-1.0),
            bmi: Some(0.0),
            ..Default::default()
        };
        assert_eq!(meta.problems().len(), 3);
        assert!(PatientMeta::default().problems().is_empty());
    }
}
