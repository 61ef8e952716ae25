//! Beat detection and the instantaneous pulse-rate series.

use serde::{Deserialize, Serialize};

use super::{design_butter_highpass, design_cheby2, slice_epochs, DspError, EpochTensor, FilterSpec};
use crate::records::PpgRecord;
use crate::staging::Hypnogram;

/// Pulse-rate grid rate.
pub const IPR_FS: f64 = 2.0;
pub const IPR_SAMPLES_PER_EPOCH: usize = 60;

const THRESHOLD_WINDOW_S: f64 = 10.0;
const THRESHOLD_HOP_S: f64 = 1.0;
const THRESHOLD_QUANTILE: f64 = 0.9;
const THRESHOLD_FRACTION: f64 = 0.6;
const REFRACTORY_S: f64 = 0.2;
/// Inter-beat intervals longer than this are treated as dropouts.
pub const MAX_IBI_S: f64 = 3.0;

/// Pulse rate in beats per minute on a 2 Hz grid starting at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IprSeries {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl IprSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn detect_peaks(ppg: &PpgRecord) -> Result<Vec<f64>, DspError> {
    detect_peaks_in(&ppg.samples, ppg.fs)
}

/// Beat times in seconds: band-pass 0.5-8 Hz, keep local maxima above 0.6x
/// the rolling 90th percentile (10-s window, 1-s hop), enforce a 0.2-s
/// refractory period keeping the taller peak, and refine each peak by a
/// parabola through its three samples.
pub fn detect_peaks_in(samples: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n.max(1) as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    if n < 3 || !(var.sqrt() > 1e-12 * mean.abs().max(1.0)) {
        return Err(DspError::NoBeatsFound);
    }
    let band = design_butter_highpass(2, 0.5, fs)?.cascade(design_cheby2(&FilterSpec::default(), fs)?);
    let x = band.filtfilt(samples)?;

    let threshold = rolling_threshold(&x, fs);
    let refractory = (REFRACTORY_S * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if !(x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > threshold[i] && x[i] > 0.0) {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < refractory => {
                if x[i] > x[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    if peaks.is_empty() {
        return Err(DspError::NoBeatsFound);
    }
    Ok(peaks
        .into_iter()
        .map(|i| {
            let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
            let denom = a - 2.0 * b + c;
            let offset = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            (i as f64 + offset.clamp(-0.5, 0.5)) / fs
        })
        .collect())
}

/// Per-sample threshold, piecewise constant over 1-s hops, each computed
/// from the 10-s window centred on its hop.
fn rolling_threshold(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let hop = ((THRESHOLD_HOP_S * fs).round() as usize).max(1);
    let half = ((THRESHOLD_WINDOW_S * fs / 2.0).round() as usize).max(1);
    let mut out = vec![0.0; n];
    let mut buf = Vec::with_capacity(2 * half + hop);
    let mut start = 0;
    while start < n {
        let end = (start + hop).min(n);
        let centre = (start + end) / 2;
        let lo = centre.saturating_sub(half);
        let hi = (centre + half).min(n);
        buf.clear();
        buf.extend_from_slice(&x[lo..hi]);
        let k = ((buf.len() - 1) as f64 * THRESHOLD_QUANTILE).round() as usize;
        let (_, q, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
        let t = THRESHOLD_FRACTION * *q;
        out[start..end].iter_mut().for_each(|v| *v = t);
        start = end;
    }
    out
}

/// Pulse rate 60/IBI placed at interval midpoints and interpolated onto the
/// 2 Hz grid covering `[0, last beat]`.
pub fn ipr_from_beats(beats: &[f64]) -> Result<IprSeries, DspError> {
    let end = beats.last().copied().unwrap_or(0.0);
    ipr_over(beats, ((end * IPR_FS).floor() + 1.0) / IPR_FS)
}

/// As [`ipr_from_beats`] but on a grid spanning `[0, duration)`. Grid points
/// before the first or after the last midpoint hold the edge value; points
/// inside an interval longer than 3 s are masked.
pub fn ipr_over(beats: &[f64], duration: f64) -> Result<IprSeries, DspError> {
    if beats.len() < 2 {
        return Err(DspError::TooFewBeats(beats.len()));
    }
    let mids: Vec<f64> = beats.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let rates: Vec<f64> = beats.windows(2).map(|w| 60.0 / (w[1] - w[0])).collect();
    let gaps: Vec<bool> = beats.windows(2).map(|w| w[1] - w[0] > MAX_IBI_S).collect();
    let n = (duration * IPR_FS + 1e-9).floor() as usize;
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut j = 0;
    let mut b = 0;
    for k in 0..n {
        let t = k as f64 / IPR_FS;
        while j + 1 < mids.len() && mids[j + 1] <= t {
            j += 1;
        }
        let v = if t <= mids[0] {
            rates[0]
        } else if j + 1 >= mids.len() {
            rates[mids.len() - 1]
        } else {
            let frac = (t - mids[j]) / (mids[j + 1] - mids[j]);
            rates[j] + frac * (rates[j + 1] - rates[j])
        };
        while b + 1 < beats.len() && beats[b + 1] <= t {
            b += 1;
        }
        let in_gap = b + 1 < beats.len() && t >= beats[b] && gaps[b];
        let ok = !in_gap && (20.0..=300.0).contains(&v);
        values.push(if ok { v } else { v.clamp(20.0, 300.0) });
        valid.push(ok);
    }
    Ok(IprSeries { values, valid })
}

/// Standardizes the valid part of a pulse-rate series (masked samples become
/// 0) and cuts it into 60-sample epochs. An epoch is invalid when its label
/// is or when more than half of its samples are masked.
pub fn ipr_epochs(ipr: &IprSeries, hypnogram: &Hypnogram) -> Result<EpochTensor, DspError> {
    let valid_values: Vec<f64> = ipr
        .values
        .iter()
        .zip(&ipr.valid)
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    if valid_values.is_empty() {
        return Err(DspError::NoBeatsFound);
    }
    let m = valid_values.len() as f64;
    let mean = valid_values.iter().sum::<f64>() / m;
    let std = (valid_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
    let scale = if std > 1e-9 { 1.0 / std } else { 1.0 };
    let z: Vec<f64> = ipr
        .values
        .iter()
        .zip(&ipr.valid)
        .map(|(v, ok)| if *ok { (v - mean) * scale } else { 0.0 })
        .collect();
    let mut t = slice_epochs(&z, IPR_SAMPLES_PER_EPOCH, &hypnogram.valid)?;
    for (e, ok) in t.valid.iter_mut().enumerate() {
        let chunk = &ipr.valid[e * IPR_SAMPLES_PER_EPOCH..(e + 1) * IPR_SAMPLES_PER_EPOCH];
        if chunk.iter().filter(|v| !**v).count() * 2 > IPR_SAMPLES_PER_EPOCH {
            *ok = false;
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pulse_train(beats: &[f64], fs: f64, duration: f64, noise: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration * fs) as usize;
        let mut x = vec![0.0; n];
        for &b in beats {
            let c = (b * fs) as isize;
            for k in (c - (fs as isize))..=(c + fs as isize) {
                if k >= 0 && (k as usize) < n {
                    let t = k as f64 / fs - b;
                    x[k as usize] += (-0.5 * (t / 0.1).powi(2)).exp();
                }
            }
        }
        for v in &mut x {
            *v += noise * rng.sample::<f64, _>(StandardNormal);
        }
        x
    }

    #[test]
    fn sixty_bpm_train() {
        let fs = 128.0;
        let beats: Vec<f64> = (1..119).map(|i| i as f64).collect();
        let x = pulse_train(&beats, fs, 120.0, 0.02, 3);
        let found = detect_peaks_in(&x, fs).unwrap();
        assert_eq!(found.len(), beats.len());
        for (f, b) in found.iter().zip(&beats) {
            assert!((f - b).abs() <= 1.0 / fs, "{f} vs {b}");
        }
    }

    #[test]
    fn chirp_is_tracked() {
        // Rate rises linearly from 60 to 100 bpm over 5 minutes.
        let fs = 100.0;
        let duration = 300.0;
        let rate = |t: f64| 60.0 + 40.0 * t / duration;
        let mut beats = vec![0.5];
        while let Some(&t) = beats.last() {
            let next = t + 60.0 / rate(t);
            if next > duration - 1.0 {
                break;
            }
            beats.push(next);
        }
        let x = pulse_train(&beats, fs, duration, 0.02, 4);
        let found = detect_peaks_in(&x, fs).unwrap();
        let ipr = ipr_from_beats(&found).unwrap();
        for k in 20..ipr.len() - 20 {
            let t = k as f64 / IPR_FS;
            assert!(ipr.valid[k]);
            assert!((ipr.values[k] - rate(t)).abs() < 2.0, "t={t} {} vs {}", ipr.values[k], rate(t));
        }
    }

    #[test]
    fn flatline_has_no_beats() {
        assert_eq!(detect_peaks_in(&[0.7; 5000], 100.0), Err(DspError::NoBeatsFound));
    }

    #[test]
    fn beats_are_strictly_increasing_and_refractory() {
        let fs = 64.0;
        let beats: Vec<f64> = (1..200).map(|i| i as f64 * 0.45).collect();
        let x = pulse_train(&beats, fs, 91.0, 0.2, 9);
        let found = detect_peaks_in(&x, fs).unwrap();
        for w in found.windows(2) {
            assert!(w[1] - w[0] >= REFRACTORY_S - 1.0 / fs);
        }
    }

    #[test]
    fn ipr_examples() {
        let ipr = ipr_from_beats(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ipr.len(), 7);
        for k in 1..=5 {
            assert!((ipr.values[k] - 60.0).abs() < 1e-12);
        }
        let ipr = ipr_from_beats(&[0.0, 0.5, 1.0]).unwrap();
        assert!(ipr.values.iter().all(|v| (v - 120.0).abs() < 1e-12));
        assert_eq!(ipr_from_beats(&[1.0]), Err(DspError::TooFewBeats(1)));
    }

    #[test]
    fn long_gap_is_masked() {
        let ipr = ipr_over(&[0.0, 1.0, 2.0, 7.0, 8.0], 9.0).unwrap();
        assert_eq!(ipr.len(), 18);
        for (k, ok) in ipr.valid.iter().enumerate() {
            let t = k as f64 / IPR_FS;
            assert_eq!(*ok, !(2.0..7.0).contains(&t), "t={t}");
        }
    }
}
