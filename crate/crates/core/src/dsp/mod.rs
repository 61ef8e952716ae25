//! Signal conditioning: anti-alias filtering, resampling to the model rate,
//! clipping and standardization, epoching, and the beat-detection path that
//! feeds the pulse-rate baseline.

mod filter;
mod peaks;

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub use filter::{
    bilinear, butter_prototype, cheby2_prototype, design_butter_highpass, design_cheby2,
    lowpass_to_highpass, lowpass_to_lowpass, Biquad, FilterSpec, Sos, Zpk,
};
pub use peaks::{
    detect_peaks, detect_peaks_in, ipr_epochs, ipr_from_beats, ipr_over, IprSeries, IPR_FS,
    IPR_SAMPLES_PER_EPOCH, MAX_IBI_S,
};

use crate::records::PpgRecord;
use crate::staging::{Hypnogram, RawHypnogram};

/// Model input rate. 30-s epochs hold exactly [`EPOCH_SAMPLES`] samples.
pub const MODEL_FS: f64 = 2048.0 / 60.0;
pub const EPOCH_SAMPLES: usize = 1024;
/// Epoch-count disagreement tolerated between signal and labels.
pub const MAX_EPOCH_DRIFT: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("sampling rate {fs} Hz must exceed {min_exclusive} Hz")]
    InvalidSampling { fs: f64, min_exclusive: f64 },
    #[error("invalid filter: {0}")]
    InvalidSpec(String),
    #[error("signal of {len} samples is too short (need at least {min})")]
    SignalTooShort { len: usize, min: usize },
    #[error("signal has zero variance")]
    DegenerateSignal,
    #[error("signal holds {signal_epochs} epochs but labels hold {label_epochs}")]
    LengthMismatch {
        signal_epochs: usize,
        label_epochs: usize,
    },
    #[error("no beats found")]
    NoBeatsFound,
    #[error("need at least two beats, got {0}")]
    TooFewBeats(usize),
    #[error("cache: {0}")]
    Cache(String),
}

/// Fixed-length epochs of a standardized signal, one row per 30-s window.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub samples_per_epoch: usize,
    /// Row-major `[n_epochs x samples_per_epoch]`.
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl EpochTensor {
    pub fn n_epochs(&self) -> usize {
        self.valid.len()
    }

    pub fn epoch(&self, i: usize) -> &[f64] {
        &self.data[i * self.samples_per_epoch..(i + 1) * self.samples_per_epoch]
    }

    fn magic(&self) -> Result<&'static [u8; 4], DspError> {
        match self.samples_per_epoch {
            EPOCH_SAMPLES => Ok(b"SPG2"),
            IPR_SAMPLES_PER_EPOCH => Ok(b"SPI2"),
            n => Err(DspError::Cache(format!("no cache layout for {n} samples per epoch"))),
        }
    }

    /// Cache layout: magic, version `u32`, epoch count `u32`, the samples as
    /// little-endian `f32`, then one mask byte per epoch. `SPG2` holds PPG
    /// epochs of 1024 samples; `SPI2` holds pulse-rate epochs of 60.
    pub fn write_cache(&self, mut w: impl Write) -> Result<(), DspError> {
        let io = |e: std::io::Error| DspError::Cache(e.to_string());
        w.write_all(self.magic()?).map_err(io)?;
        w.write_all(&1u32.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n_epochs() as u32).to_le_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4 + self.n_epochs());
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend(self.valid.iter().map(|v| u8::from(*v)));
        w.write_all(&buf).map_err(io)
    }

    pub fn read_cache(mut r: impl Read) -> Result<EpochTensor, DspError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| DspError::Cache(e.to_string()))?;
        if bytes.len() < 12 {
            return Err(DspError::Cache("header truncated".into()));
        }
        let samples_per_epoch = match &bytes[..4] {
            b"SPG2" => EPOCH_SAMPLES,
            b"SPI2" => IPR_SAMPLES_PER_EPOCH,
            m => return Err(DspError::Cache(format!("bad magic {m:?}"))),
        };
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(DspError::Cache(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_values = n * samples_per_epoch;
        let expected = 12 + 4 * n_values + n;
        if bytes.len() != expected {
            return Err(DspError::Cache(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let data = bytes[12..12 + 4 * n_values]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let valid = bytes[12 + 4 * n_values..].iter().map(|b| *b != 0).collect();
        Ok(EpochTensor {
            samples_per_epoch,
            data,
            valid,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DspError> {
        let f = std::fs::File::create(path).map_err(|e| DspError::Cache(e.to_string()))?;
        self.write_cache(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EpochTensor, DspError> {
        let f = std::fs::File::open(path).map_err(|e| DspError::Cache(e.to_string()))?;
        EpochTensor::read_cache(std::io::BufReader::new(f))
    }
}

/// Zero-phase low-pass per `spec` (plain causal filtering when
/// `spec.zero_phase` is false).
pub fn lowpass(signal: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    let sos = design_cheby2(spec, fs)?;
    if spec.zero_phase {
        sos.filtfilt(signal)
    } else {
        Ok(sos.filter(signal))
    }
}

/// Linear-interpolation resampler. Output sample `k` sits at time
/// `k / fs_out`; the output spans `floor(duration * fs_out)` samples and the
/// last input sample is held past the end.
pub fn resample_linear(signal: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let n_out = (signal.len() as f64 * fs_out / fs_in + 1e-9).floor() as usize;
    let step = fs_in / fs_out;
    let last = signal.len() - 1;
    (0..n_out)
        .map(|k| {
            let t = k as f64 * step;
            let i = t.floor() as usize;
            if i >= last {
                signal[last]
            } else {
                let frac = t - i as f64;
                signal[i] + frac * (signal[i + 1] - signal[i])
            }
        })
        .collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Clips to three standard deviations around the mean of the whole signal,
/// then z-scores with statistics recomputed after clipping.
pub fn clip_and_standardize(signal: &[f64]) -> Result<Vec<f64>, DspError> {
    if signal.is_empty() {
        return Err(DspError::SignalTooShort { len: 0, min: 1 });
    }
    let (mean, std) = mean_std(signal);
    let (lo, hi) = (mean - 3.0 * std, mean + 3.0 * std);
    let clipped: Vec<f64> = signal.iter().map(|x| x.clamp(lo, hi)).collect();
    let (mean, std) = mean_std(&clipped);
    if !(std > 0.0) || std < 1e-12 * mean.abs() {
        return Err(DspError::DegenerateSignal);
    }
    Ok(clipped.into_iter().map(|x| (x - mean) / std).collect())
}

/// Cuts a model-rate signal into 30-s rows aligned with the labels. The
/// trailing partial epoch is dropped, as are labels past the signal end.
pub fn epoch_slice(signal: &[f64], hypnogram: &Hypnogram) -> Result<EpochTensor, DspError> {
    slice_epochs(signal, EPOCH_SAMPLES, &hypnogram.valid)
}

pub(crate) fn slice_epochs(
    signal: &[f64],
    samples_per_epoch: usize,
    label_valid: &[bool],
) -> Result<EpochTensor, DspError> {
    let signal_epochs = signal.len() / samples_per_epoch;
    let label_epochs = label_valid.len();
    if signal_epochs.abs_diff(label_epochs) > MAX_EPOCH_DRIFT {
        return Err(DspError::LengthMismatch {
            signal_epochs,
            label_epochs,
        });
    }
    let n = signal_epochs.min(label_epochs);
    Ok(EpochTensor {
        samples_per_epoch,
        data: signal[..n * samples_per_epoch].to_vec(),
        valid: label_valid[..n].to_vec(),
    })
}

/// The full PPG path: harmonize labels, mask repaired gaps, low-pass at the
/// native rate, resample to [`MODEL_FS`], clip/standardize and epoch. The
/// returned hypnogram is truncated to the epoch count.
pub fn preprocess_ppg(
    record: &PpgRecord,
    labels: &RawHypnogram,
    spec: &FilterSpec,
) -> Result<(EpochTensor, Hypnogram), DspError> {
    let mut hyp = labels.harmonize();
    hyp.mask_spans(&record.gaps);
    let filtered = lowpass(&record.samples, record.fs, spec)?;
    let resampled = resample_linear(&filtered, record.fs, MODEL_FS);
    let standardized = clip_and_standardize(&resampled)?;
    let epochs = epoch_slice(&standardized, &hyp)?;
    hyp.stages.truncate(epochs.n_epochs());
    hyp.valid.truncate(epochs.n_epochs());
    Ok((epochs, hyp))
}

/// The pulse-rate path: beats, instantaneous pulse rate at 2 Hz, epochs of
/// 60 standardized samples.
pub fn preprocess_ipr(
    record: &PpgRecord,
    labels: &RawHypnogram,
) -> Result<(EpochTensor, Hypnogram), DspError> {
    let mut hyp = labels.harmonize();
    hyp.mask_spans(&record.gaps);
    let beats = detect_peaks(record)?;
    let ipr = ipr_over(&beats, record.duration())?;
    let epochs = ipr_epochs(&ipr, &hyp)?;
    hyp.stages.truncate(epochs.n_epochs());
    hyp.valid.truncate(epochs.n_epochs());
    Ok((epochs, hyp))
}
