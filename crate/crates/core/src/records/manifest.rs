//! Dataset manifests (JSON).
//!
//! ```json
//! {
//!   "name": "domain_a",
//!   "role": "source",
//!   "records": [
//!     { "record_id": "a000", "signal_path": "signals/a000.edf",
//!       "label_path": "labels/a000.csv", "fs": 128.0, "channel": "Pleth",
//!       "meta": { "age": 54.0, "sex": "female", "ahi": 7.5, "bmi": 27.1,
//!                 "ethnicity": "white" } }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PatientMeta, RecordError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Source,
    Target,
}

fn default_channel() -> String {
    "Pleth".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub signal_path: PathBuf,
    pub label_path: PathBuf,
    pub fs: f64,
    #[serde(default = "default_channel")]
    pub channel: String,
    #[serde(default)]
    pub meta: PatientMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub role: DatasetRole,
    pub records: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Every problem with the manifest, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for e in &self.records {
            if !seen.insert(e.record_id.as_str()) {
                problems.push(format!("duplicate id {:?}", e.record_id));
            }
            for p in [&e.signal_path, &e.label_path] {
                if !self.resolve(p).is_file() {
                    problems.push(format!("{}: missing file {}", e.record_id, p.display()));
                }
            }
            if !(e.fs > 0.0) {
                problems.push(format!("{}: sampling rate {} is not positive", e.record_id, e.fs));
            }
            for m in e.meta.problems() {
                problems.push(format!("{}: {m}", e.record_id));
            }
        }
        problems
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecordError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| RecordError::io(path, e))
    }
}

/// Parses and validates a manifest, collecting every offending entry.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, RecordError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| RecordError::Manifest {
            path: path.to_path_buf(),
            problems: vec![e.to_string()],
        })?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let problems = manifest.problems();
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(RecordError::Manifest {
            path: path.to_path_buf(),
            problems,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn entry(id: &str, signal: &str) -> ManifestEntry {
        ManifestEntry {
            record_id: id.into(),
            signal_path: signal.into(),
            label_path: "l.csv".into(),
            fs: 128.0,
            channel: default_channel(),
            meta: PatientMeta::default(),
        }
    }

    fn write(dir: &Path, records: Vec<ManifestEntry>) -> PathBuf {
        fs::write(dir.join("s.edf"), b"x").unwrap();
        fs::write(dir.join("t.edf"), b"x").unwrap();
        fs::write(dir.join("l.csv"), b"W\n").unwrap();
        let m = DatasetManifest {
            name: "d".into(),
            role: DatasetRole::Source,
            records,
            base_dir: PathBuf::new(),
        };
        let p = dir.join("manifest.json");
        m.save(&p).unwrap();
        p
    }

    #[test]
    fn two_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![entry("a", "s.edf"), entry("b", "t.edf")]);
        let m = load_manifest(p).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.resolve(Path::new("s.edf")), dir.path().join("s.edf"));
    }

    #[test]
    fn dangling_path_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![entry("a", "s.edf"), entry("b", "gone.edf")]);
        match load_manifest(p) {
            Err(RecordError::Manifest { problems, .. }) => {
                assert_eq!(problems.len(), 1);
                assert!(problems[0].contains("gone.edf"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_problems_are_collected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            vec![entry("a", "s.edf"), entry("a", "gone.edf"), entry("c", "nope.edf")],
        );
        match load_manifest(p) {
            Err(RecordError::Manifest { problems, .. }) => {
                assert_eq!(problems.len(), 3);
                assert!(problems.iter().any(|p| p.contains("duplicate id")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
