//! Minimal EDF (1992) reader and writer.
//!
//! Only the continuous layout is handled. Header fields are kept as the
//! strings found on disk so that parse followed by serialize reproduces the
//! input byte-for-byte.

use std::fs;
use std::path::Path;

use super::{PatientMeta, PpgRecord, RecordError};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL_HEADER: usize = 256;

/// Field widths of the per-signal header block, in on-disk order.
const SIGNAL_FIELDS: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: String,
    pub physical_max: String,
    pub digital_min: String,
    pub digital_max: String,
    pub prefiltering: String,
    pub samples_per_record: String,
    pub reserved: String,
}

/// Typed view of the calibration fields of one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
}

impl Calibration {
    /// Affine map written as a convex combination so both endpoints are exact.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let t = f64::from(i32::from(digital) - self.digital_min)
            / f64::from(self.digital_max - self.digital_min);
        self.physical_min * (1.0 - t) + self.physical_max * t
    }

    pub fn to_digital(&self, physical: f64) -> i16 {
        let t = (physical - self.physical_min) / (self.physical_max - self.physical_min);
        let d = f64::from(self.digital_min) + t * f64::from(self.digital_max - self.digital_min);
        d.round()
            .clamp(f64::from(self.digital_min), f64::from(self.digital_max)) as i16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: String,
    pub reserved: String,
    pub n_records: String,
    pub record_duration: String,
    pub n_signals: String,
    pub signals: Vec<EdfSignalHeader>,
}

/// A parsed EDF file: header plus raw digital samples per signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub samples: Vec<Vec<i16>>,
}

fn field(bytes: &[u8], name: &str) -> Result<String, RecordError> {
    let s = std::str::from_utf8(bytes)
        .ok()
        .filter(|s| s.is_ascii())
        .ok_or_else(|| RecordError::MalformedHeader(format!("{name}: not ASCII")))?;
    Ok(s.trim_end_matches(' ').to_string())
}

fn numeric<T: std::str::FromStr>(value: &str, name: &str) -> Result<T, RecordError> {
    value
        .trim()
        .parse()
        .map_err(|_| RecordError::MalformedHeader(format!("{name}: {value:?} is not numeric")))
}

fn push_field(out: &mut Vec<u8>, value: &str, width: usize) {
    let bytes = value.as_bytes();
    let n = bytes.len().min(width);
    out.extend_from_slice(&bytes[..n]);
    out.extend(std::iter::repeat_n(b' ', width - n));
}

/// Shortest decimal rendering that fits an 8-character EDF field. The
/// result is a fixed point of format-after-parse.
pub fn format_field8(x: f64) -> Result<String, RecordError> {
    let x = if x == 0.0 { 0.0 } else { x };
    let s = format!("{x}");
    if s.len() <= 8 {
        return Ok(s);
    }
    for decimals in (0..=7).rev() {
        let mut s = format!("{x:.decimals$}");
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        if s == "-0" {
            s = "0".into();
        }
        if s.len() <= 8 {
            return Ok(s);
        }
    }
    Err(RecordError::MalformedHeader(format!(
        "{x} does not fit an 8-character field"
    )))
}

impl EdfHeader {
    pub fn n_signals(&self) -> Result<usize, RecordError> {
        numeric(&self.n_signals, "number of signals")
    }

    pub fn record_duration(&self) -> Result<f64, RecordError> {
        let d: f64 = numeric(&self.record_duration, "record duration")?;
        if d > 0.0 {
            Ok(d)
        } else {
            Err(RecordError::MalformedHeader(format!(
                "record duration must be positive, got {d}"
            )))
        }
    }

    pub fn n_records(&self) -> Result<i64, RecordError> {
        numeric(&self.n_records, "number of data records")
    }

    pub fn samples_per_record(&self, signal: usize) -> Result<usize, RecordError> {
        numeric(&self.signals[signal].samples_per_record, "samples per record")
    }

    pub fn calibration(&self, signal: usize) -> Result<Calibration, RecordError> {
        let s = &self.signals[signal];
        let cal = Calibration {
            physical_min: numeric(&s.physical_min, "physical minimum")?,
            physical_max: numeric(&s.physical_max, "physical maximum")?,
            digital_min: numeric(&s.digital_min, "digital minimum")?,
            digital_max: numeric(&s.digital_max, "digital maximum")?,
        };
        if cal.digital_max <= cal.digital_min {
            return Err(RecordError::MalformedHeader(format!(
                "signal {:?}: digital maximum must exceed digital minimum",
                s.label
            )));
        }
        if cal.physical_max == cal.physical_min {
            return Err(RecordError::MalformedHeader(format!(
                "signal {:?}: physical range is empty",
                s.label
            )));
        }
        Ok(cal)
    }

    pub fn sampling_rate(&self, signal: usize) -> Result<f64, RecordError> {
        Ok(self.samples_per_record(signal)? as f64 / self.record_duration()?)
    }

    fn header_len(&self) -> usize {
        FIXED_HEADER + PER_SIGNAL_HEADER * self.signals.len()
    }
}

impl EdfFile {
    pub fn parse(bytes: &[u8]) -> Result<EdfFile, RecordError> {
        if bytes.len() < FIXED_HEADER {
            return Err(RecordError::TruncatedData {
                expected: FIXED_HEADER,
                actual: bytes.len(),
            });
        }
        let mut off = 0;
        let mut take = |width: usize, name: &str| {
            let f = field(&bytes[off..off + width], name);
            off += width;
            f
        };
        let version = take(8, "version")?;
        let patient_id = take(80, "patient id")?;
        let recording_id = take(80, "recording id")?;
        let start_date = take(8, "start date")?;
        let start_time = take(8, "start time")?;
        let header_bytes = take(8, "header bytes")?;
        let reserved = take(44, "reserved")?;
        let n_records = take(8, "number of data records")?;
        let record_duration = take(8, "record duration")?;
        let n_signals = take(4, "number of signals")?;

        if reserved.starts_with("EDF+D") {
            return Err(RecordError::Unsupported(
                "discontinuous EDF+ files are not supported".into(),
            ));
        }
        let ns: usize = numeric(&n_signals, "number of signals")?;
        let header_len = FIXED_HEADER + PER_SIGNAL_HEADER * ns;
        if bytes.len() < header_len {
            return Err(RecordError::TruncatedData {
                expected: header_len,
                actual: bytes.len(),
            });
        }
        let declared: usize = numeric(&header_bytes, "header bytes")?;
        if declared != header_len {
            return Err(RecordError::MalformedHeader(format!(
                "header bytes field says {declared}, {ns} signals need {header_len}"
            )));
        }

        // Per-signal fields are stored field-major: all labels, then all transducers, ...
        let mut columns: Vec<Vec<String>> = Vec::with_capacity(SIGNAL_FIELDS.len());
        let mut off = FIXED_HEADER;
        for (k, width) in SIGNAL_FIELDS.iter().enumerate() {
            let mut col = Vec::with_capacity(ns);
            for _ in 0..ns {
                col.push(field(&bytes[off..off + width], &format!("signal field {k}"))?);
                off += width;
            }
            columns.push(col);
        }
        let signals: Vec<EdfSignalHeader> = (0..ns)
            .map(|i| EdfSignalHeader {
                label: columns[0][i].clone(),
                transducer: columns[1][i].clone(),
                physical_dimension: columns[2][i].clone(),
                physical_min: columns[3][i].clone(),
                physical_max: columns[4][i].clone(),
                digital_min: columns[5][i].clone(),
                digital_max: columns[6][i].clone(),
                prefiltering: columns[7][i].clone(),
                samples_per_record: columns[8][i].clone(),
                reserved: columns[9][i].clone(),
            })
            .collect();

        let header = EdfHeader {
            version,
            patient_id,
            recording_id,
            start_date,
            start_time,
            header_bytes,
            reserved,
            n_records,
            record_duration,
            n_signals,
            signals,
        };
        header.record_duration()?;
        let per_record: Vec<usize> = (0..ns)
            .map(|i| header.samples_per_record(i))
            .collect::<Result<_, _>>()?;
        for i in 0..ns {
            if header.signals[i].label != "EDF Annotations" {
                header.calibration(i)?;
            }
        }
        let record_samples: usize = per_record.iter().sum();
        let data = &bytes[header_len..];
        let n_records = match header.n_records()? {
            -1 if record_samples > 0 => (data.len() / (2 * record_samples)) as i64,
            n if n >= 0 => n,
            n => {
                return Err(RecordError::MalformedHeader(format!(
                    "negative record count {n}"
                )))
            }
        } as usize;
        let expected = header_len + 2 * record_samples * n_records;
        if bytes.len() < expected {
            return Err(RecordError::TruncatedData {
                expected,
                actual: bytes.len(),
            });
        }

        let mut samples: Vec<Vec<i16>> = per_record
            .iter()
            .map(|n| Vec::with_capacity(n * n_records))
            .collect();
        let mut pos = 0;
        for _ in 0..n_records {
            for (sig, n) in per_record.iter().enumerate() {
                let chunk = &data[pos..pos + 2 * n];
                samples[sig].extend(
                    chunk
                        .chunks_exact(2)
                        .map(|b| i16::from_le_bytes([b[0], b[1]])),
                );
                pos += 2 * n;
            }
        }
        Ok(EdfFile { header, samples })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RecordError> {
        let h = &self.header;
        let ns = h.signals.len();
        let per_record: Vec<usize> = (0..ns)
            .map(|i| h.samples_per_record(i))
            .collect::<Result<_, _>>()?;
        let n_records = if per_record.iter().all(|n| *n == 0) {
            0
        } else {
            per_record
                .iter()
                .zip(&self.samples)
                .filter(|(n, _)| **n > 0)
                .map(|(n, s)| s.len() / n)
                .min()
                .unwrap_or(0)
        };
        let mut out = Vec::with_capacity(h.header_len() + 2 * n_records * per_record.iter().sum::<usize>());
        push_field(&mut out, &h.version, 8);
        push_field(&mut out, &h.patient_id, 80);
        push_field(&mut out, &h.recording_id, 80);
        push_field(&mut out, &h.start_date, 8);
        push_field(&mut out, &h.start_time, 8);
        push_field(&mut out, &h.header_bytes, 8);
        push_field(&mut out, &h.reserved, 44);
        push_field(&mut out, &h.n_records, 8);
        push_field(&mut out, &h.record_duration, 8);
        push_field(&mut out, &h.n_signals, 4);
        let getters: [fn(&EdfSignalHeader) -> &str; 10] = [
            |s| &s.label,
            |s| &s.transducer,
            |s| &s.physical_dimension,
            |s| &s.physical_min,
            |s| &s.physical_max,
            |s| &s.digital_min,
            |s| &s.digital_max,
            |s| &s.prefiltering,
            |s| &s.samples_per_record,
            |s| &s.reserved,
        ];
        for (get, width) in getters.iter().zip(SIGNAL_FIELDS) {
            for s in &h.signals {
                push_field(&mut out, get(s), width);
            }
        }
        for r in 0..n_records {
            for (sig, n) in per_record.iter().enumerate() {
                for v in &self.samples[sig][r * n..(r + 1) * n] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<EdfFile, RecordError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| RecordError::io(path, e))?;
        EdfFile::parse(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RecordError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| RecordError::io(path, e))
    }

    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.header.signals.iter().position(|s| s.label.trim() == label)
    }

    /// Physical-unit samples of signal `index`.
    pub fn physical(&self, index: usize) -> Result<Vec<f64>, RecordError> {
        let cal = self.header.calibration(index)?;
        Ok(self.samples[index].iter().map(|d| cal.to_physical(*d)).collect())
    }

    /// Builds a single-signal file, choosing the calibration from the data
    /// range. `record_duration` must divide into an integer sample count.
    pub fn from_physical(
        label: &str,
        samples: &[f64],
        fs: f64,
        record_duration: f64,
        patient_id: &str,
    ) -> Result<EdfFile, RecordError> {
        let per_record = fs * record_duration;
        if per_record.fract().abs() > 1e-9 || per_record < 1.0 {
            return Err(RecordError::Unsupported(format!(
                "{fs} Hz does not give an integer sample count per {record_duration} s record"
            )));
        }
        let per_record = per_record.round() as usize;
        let (mut lo, mut hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        let physical_min = format_field8(lo)?;
        let mut physical_max = format_field8(hi)?;
        if physical_max == physical_min {
            physical_max = format_field8(hi + 1.0)?;
        }
        let signal = EdfSignalHeader {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: "au".into(),
            physical_min,
            physical_max,
            digital_min: i16::MIN.to_string(),
            digital_max: i16::MAX.to_string(),
            prefiltering: String::new(),
            samples_per_record: per_record.to_string(),
            reserved: String::new(),
        };
        let n_records = samples.len() / per_record;
        let header = EdfHeader {
            version: "0".into(),
            patient_id: patient_id.to_string(),
            recording_id: "Startdate X".into(),
            start_date: "01.01.00".into(),
            start_time: "00.00.00".into(),
            header_bytes: (FIXED_HEADER + PER_SIGNAL_HEADER).to_string(),
            reserved: String::new(),
            n_records: n_records.to_string(),
            record_duration: format_field8(record_duration)?,
            n_signals: "1".into(),
            signals: vec![signal],
        };
        let cal = header.calibration(0)?;
        let digital = samples[..n_records * per_record]
            .iter()
            .map(|x| cal.to_digital(*x))
            .collect();
        Ok(EdfFile {
            header,
            samples: vec![digital],
        })
    }
}

/// Reads the named channel as a physical-unit record. The record id is the
/// patient-id field of the header.
pub fn read_edf(path: impl AsRef<Path>, channel_name: &str) -> Result<PpgRecord, RecordError> {
    let file = EdfFile::read(path)?;
    let index = file
        .signal_index(channel_name)
        .ok_or_else(|| RecordError::ChannelNotFound(channel_name.to_string()))?;
    let fs = file.header.sampling_rate(index)?;
    let samples = file.physical(index)?;
    Ok(PpgRecord {
        record_id: file.header.patient_id.trim().to_string(),
        samples,
        fs,
        meta: PatientMeta::default(),
        gaps: Vec::new(),
    })
}

/// Writes `record` as a single-channel EDF with one-second data records
/// (or the shortest whole-sample duration for fractional rates).
pub fn write_edf(
    path: impl AsRef<Path>,
    record: &PpgRecord,
    channel_name: &str,
) -> Result<(), RecordError> {
    let duration = [1.0, 2.0, 4.0, 5.0, 10.0]
        .into_iter()
        .find(|d| (record.fs * d).fract().abs() < 1e-9)
        .ok_or_else(|| {
            RecordError::Unsupported(format!("no whole-sample record length for {} Hz", record.fs))
        })?;
    EdfFile::from_physical(channel_name, &record.samples, record.fs, duration, &record.record_id)?
        .write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_signal(label: &str, n_records: usize, per_record: usize, value: i16) -> EdfFile {
        let mut f = EdfFile::from_physical(label, &vec![0.0; n_records * per_record], per_record as f64, 1.0, "p1")
            .unwrap();
        f.header.signals[0].physical_min = "-100".into();
        f.header.signals[0].physical_max = "250.5".into();
        f.samples[0] = vec![value; n_records * per_record];
        f
    }

    #[test]
    fn digital_max_maps_to_physical_max() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.edf");
        one_signal("Pleth", 10, 128, i16::MAX).write(&path).unwrap();
        let rec = read_edf(&path, "Pleth").unwrap();
        assert_eq!(rec.samples.len(), 1280);
        assert_eq!(rec.fs, 128.0);
        assert!(rec.samples.iter().all(|x| *x == 250.5));
    }

    #[test]
    fn digital_min_maps_to_physical_min() {
        let f = one_signal("Pleth", 2, 4, i16::MIN);
        assert!(f.physical(0).unwrap().iter().all(|x| *x == -100.0));
    }

    #[test]
    fn missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eeg.edf");
        one_signal("EEG", 1, 8, 0).write(&path).unwrap();
        assert!(matches!(
            read_edf(&path, "Pleth"),
            Err(RecordError::ChannelNotFound(c)) if c == "Pleth"
        ));
    }

    #[test]
    fn truncated_data_region() {
        let bytes = one_signal("Pleth", 3, 16, 5).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(EdfFile::parse(cut), Err(RecordError::TruncatedData { .. })));
    }

    #[test]
    fn non_numeric_field() {
        let mut f = one_signal("Pleth", 1, 8, 0);
        f.header.signals[0].samples_per_record = "abc".into();
        let mut bytes = one_signal("Pleth", 1, 8, 0).to_bytes().unwrap();
        // Overwrite the samples-per-record field in place.
        let off = 256 + 16 + 80 + 8 * 5 + 80;
        bytes[off..off + 8].copy_from_slice(b"abc     ");
        assert!(matches!(EdfFile::parse(&bytes), Err(RecordError::MalformedHeader(_))));
        assert!(f.to_bytes().is_err());
    }

    #[test]
    fn field8_is_stable() {
        for x in [0.0, -0.0, 1.5, -123.456789, 1234567.891, 0.000012345, 98765432.0, -3.25e-3] {
            let s = format_field8(x).unwrap();
            assert!(s.len() <= 8, "{s}");
            let y: f64 = s.parse().unwrap();
            assert_eq!(format_field8(y).unwrap(), s);
        }
        assert!(format_field8(1e12).is_err());
    }
}
