//! Synthetic PPG domains with known hypnograms.
//!
//! A night is a Markov chain over the four stages. Each epoch gets a pulse
//! rate drawn around its stage mean (plus a patient offset and the domain
//! offset); beats follow with stage-dependent interval jitter. The signal is
//! a train of Gaussian pulses whose height is modulated at the breathing
//! rate with a stage-dependent depth, scaled by the domain amplitude and
//! buried in white noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ProtocolError, Result};
use crate::records::{
    write_edf, write_labels, DatasetManifest, DatasetRole, ManifestEntry, PatientMeta, PpgRecord, Sex,
};
use crate::staging::{RawStage, Stage4, EPOCH_SECONDS};

pub const MIN_RATE_BPM: f64 = 40.0;
pub const MAX_RATE_BPM: f64 = 120.0;
pub const CHANNEL: &str = "Pleth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    pub rate_offset_bpm: f64,
    pub amplitude_scale: f64,
    /// White-noise standard deviation in sensor units.
    pub noise_sd: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            rate_offset_bpm: 0.0,
            amplitude_scale: 1.0,
            noise_sd: 0.05,
        }
    }
}

/// Per-stage parameters are indexed Wake, Light, Deep, REM. Fields missing
/// from JSON take the values of [`SynthDomainSpec::standard`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDomainSpec {
    pub name: String,
    pub n_patients: usize,
    pub epochs_per_night: usize,
    pub fs: f64,
    pub transition: [[f64; 4]; 4],
    pub initial: [f64; 4],
    pub rate_mean_bpm: [f64; 4],
    /// Epoch-to-epoch spread of the rate around the stage mean.
    pub rate_sd_bpm: [f64; 4],
    /// Beat-to-beat interval jitter as a fraction of the interval.
    pub variability: [f64; 4],
    /// Depth of the respiratory amplitude modulation.
    pub resp_depth: [f64; 4],
    pub resp_rate_hz: f64,
    /// Spread of the per-patient baseline rate offset.
    pub patient_rate_sd_bpm: f64,
    pub pulse_width_s: f64,
    pub shift: DomainShift,
}

impl Default for SynthDomainSpec {
    fn default() -> Self {
        SynthDomainSpec::standard("synth", 12, 120)
    }
}

impl SynthDomainSpec {
    /// A domain with long stage bouts and well separated stage signatures.
    pub fn standard(name: &str, n_patients: usize, epochs_per_night: usize) -> Self {
        SynthDomainSpec {
            name: name.to_string(),
            n_patients,
            epochs_per_night,
            fs: 64.0,
            transition: [
                [0.90, 0.08, 0.00, 0.02],
                [0.03, 0.90, 0.04, 0.03],
                [0.01, 0.07, 0.92, 0.00],
                [0.03, 0.05, 0.00, 0.92],
            ],
            initial: [1.0, 0.0, 0.0, 0.0],
            rate_mean_bpm: [80.0, 64.0, 56.0, 72.0],
            rate_sd_bpm: [2.5, 1.5, 1.0, 2.5],
            variability: [0.06, 0.03, 0.01, 0.09],
            resp_depth: [0.10, 0.20, 0.40, 0.05],
            resp_rate_hz: 0.25,
            patient_rate_sd_bpm: 2.0,
            pulse_width_s: 0.08,
            shift: DomainShift::default(),
        }
    }

    pub fn with_shift(mut self, shift: DomainShift) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProtocolError::Synth(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid domain name {:?}", self.name));
        }
        if self.n_patients == 0 || self.epochs_per_night == 0 {
            return bad("need at least one patient and one epoch".into());
        }
        if !(self.fs >= 16.0) || (self.fs.fract() != 0.0) {
            return bad(format!("sampling rate {} must be a whole number of Hz above 16", self.fs));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} is not a probability vector"));
            }
        }
        if self.initial.iter().any(|p| !(*p >= 0.0)) || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("initial distribution is not a probability vector".into());
        }
        for (s, m) in self.rate_mean_bpm.iter().enumerate() {
            let r = m + self.shift.rate_offset_bpm;
            if !(MIN_RATE_BPM..=MAX_RATE_BPM).contains(&r) {
                return bad(format!("stage {s} rate {r} bpm outside [40, 120]"));
            }
        }
        let non_negative = self
            .rate_sd_bpm
            .iter()
            .chain(&self.variability)
            .chain(&self.resp_depth)
            .chain([&self.patient_rate_sd_bpm, &self.shift.noise_sd])
            .all(|v| *v >= 0.0);
        if !non_negative || self.resp_depth.iter().any(|d| *d >= 1.0) {
            return bad("spreads must be non-negative and modulation depths below 1".into());
        }
        if !(self.shift.amplitude_scale > 0.0) || !(self.pulse_width_s > 0.0) || !(self.resp_rate_hz > 0.0) {
            return bad("amplitude scale, pulse width and breathing rate must be positive".into());
        }
        Ok(())
    }
}

/// One generated night.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthNight {
    pub record: PpgRecord,
    pub stages: Vec<Stage4>,
    pub beats: Vec<f64>,
}

fn raw_token(stage: Stage4) -> RawStage {
    match stage {
        Stage4::Wake => RawStage::W,
        Stage4::Light => RawStage::N2,
        Stage4::Deep => RawStage::N3,
        Stage4::Rem => RawStage::Rem,
    }
}

fn sample_meta(rng: &mut ChaCha8Rng) -> PatientMeta {
    const ETHNICITY: [&str; 4] = ["asian", "black", "hispanic", "white"];
    PatientMeta {
        age: Some((rng.random_range(20.0..85.0f64) * 10.0).round() / 10.0),
        sex: if rng.random::<bool>() { Sex::Male } else { Sex::Female },
        ahi: Some((rng.random::<f64>().powi(2) * 60.0 * 10.0).round() / 10.0),
        bmi: Some((rng.random_range(19.0..40.0f64) * 10.0).round() / 10.0),
        ethnicity: Some(ETHNICITY[rng.random_range(0..ETHNICITY.len())].to_string()),
        diagnosis: None,
    }
}

/// Generates one night from `rng`.
pub fn synth_night(spec: &SynthDomainSpec, record_id: &str, rng: &mut ChaCha8Rng) -> SynthNight {
    let n_epochs = spec.epochs_per_night;
    let initial = WeightedIndex::new(spec.initial).expect("validated distribution");
    let rows: Vec<WeightedIndex<f64>> = spec
        .transition
        .iter()
        .map(|r| WeightedIndex::new(r).expect("validated distribution"))
        .collect();
    let mut stages = Vec::with_capacity(n_epochs);
    let mut s = initial.sample(rng);
    for _ in 0..n_epochs {
        stages.push(Stage4::from_index(s).unwrap());
        s = rows[s].sample(rng);
    }

    let meta = sample_meta(rng);
    let patient_offset = spec.patient_rate_sd_bpm * rng.sample::<f64, _>(StandardNormal);
    let resp_hz = spec.resp_rate_hz * rng.random_range(0.85..1.15);
    let resp_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut drift = 0.0;
    let rates: Vec<f64> = stages
        .iter()
        .map(|st| {
            let k = st.index();
            drift = 0.7 * drift + 0.714 * rng.sample::<f64, _>(StandardNormal);
            (spec.rate_mean_bpm[k] + spec.shift.rate_offset_bpm + patient_offset + spec.rate_sd_bpm[k] * drift)
                .clamp(MIN_RATE_BPM, MAX_RATE_BPM)
        })
        .collect();

    let duration = n_epochs as f64 * EPOCH_SECONDS;
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.0..0.5);
    while t < duration {
        beats.push(t);
        let e = ((t / EPOCH_SECONDS) as usize).min(n_epochs - 1);
        let k = stages[e].index();
        let ibi = 60.0 / rates[e] * (1.0 + spec.variability[k] * rng.sample::<f64, _>(StandardNormal));
        t += ibi.max(0.3);
    }

    let n = (duration * spec.fs).round() as usize;
    let mut x: Vec<f64> = (0..n).map(|_| spec.shift.noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let w = spec.pulse_width_s;
    let reach = (4.0 * w * spec.fs).ceil() as isize;
    for &tb in &beats {
        let e = ((tb / EPOCH_SECONDS) as usize).min(n_epochs - 1);
        let depth = spec.resp_depth[stages[e].index()];
        let height = spec.shift.amplitude_scale
            * (1.0 + depth * (std::f64::consts::TAU * resp_hz * tb + resp_phase).sin());
        let centre = (tb * spec.fs).round() as isize;
        for i in (centre - reach).max(0)..(centre + reach + 1).min(n as isize) {
            let dt = i as f64 / spec.fs - tb;
            x[i as usize] += height * (-0.5 * (dt / w).powi(2)).exp();
        }
    }
    SynthNight {
        record: PpgRecord {
            record_id: record_id.to_string(),
            samples: x,
            fs: spec.fs,
            meta,
            gaps: Vec::new(),
        },
        stages,
        beats,
    }
}

/// Writes `<out>/<name>/manifest.json` with one EDF signal and one label
/// file per patient. Output depends only on `spec` and `seed`.
pub fn generate_synthetic_domain(spec: &SynthDomainSpec, seed: u64, out: impl AsRef<Path>) -> Result<PathBuf> {
    spec.validate()?;
    let dir = out.as_ref().join(&spec.name);
    for sub in ["signals", "labels"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| ProtocolError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let id = format!("{}-{p:03}", spec.name);
        let night = synth_night(spec, &id, &mut rng);
        let signal_path = PathBuf::from("signals").join(format!("{id}.edf"));
        let label_path = PathBuf::from("labels").join(format!("{id}.csv"));
        write_edf(dir.join(&signal_path), &night.record, CHANNEL)?;
        let tokens: Vec<RawStage> = night.stages.iter().map(|s| raw_token(*s)).collect();
        write_labels(dir.join(&label_path), &tokens)?;
        records.push(ManifestEntry {
            record_id: id,
            signal_path,
            label_path,
            fs: spec.fs,
            channel: CHANNEL.to_string(),
            meta: night.record.meta,
        });
    }
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        role: DatasetRole::Source,
        records,
        base_dir: dir.clone(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::detect_peaks;
    use crate::records::{load_entry, load_manifest};

    #[test]
    fn absorbing_wake_gives_all_wake() {
        let mut spec = SynthDomainSpec::standard("w", 2, 10);
        spec.transition[0] = [1.0, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2 {
            let night = synth_night(&spec, "x", &mut rng);
            assert!(night.stages.iter().all(|s| *s == Stage4::Wake));
            assert_eq!(night.record.samples.len(), 10 * 30 * 64);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthDomainSpec::standard("a", 1, 4);
        spec.transition[1][1] = 0.5;
        assert!(spec.validate().is_err());
        let spec = SynthDomainSpec::standard("a", 1, 4).with_shift(DomainShift {
            rate_offset_bpm: 50.0,
            ..DomainShift::default()
        });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn detected_rate_follows_offset() {
        let base = SynthDomainSpec::standard("a", 1, 20);
        let fast = SynthDomainSpec {
            name: "b".into(),
            ..base.clone()
        }
        .with_shift(DomainShift {
            rate_offset_bpm: 15.0,
            ..DomainShift::default()
        });
        let mean_rate = |spec: &SynthDomainSpec| -> f64 {
            let night = synth_night(spec, "x", &mut ChaCha8Rng::seed_from_u64(5));
            let beats = detect_peaks(&night.record).unwrap();
            60.0 * (beats.len() - 1) as f64 / (beats[beats.len() - 1] - beats[0])
        };
        let d = mean_rate(&fast) - mean_rate(&base);
        assert!((d - 15.0).abs() < 1.0, "{d}");
    }

    #[test]
    fn generation_is_reproducible_and_loadable() {
        let spec = SynthDomainSpec::standard("dom", 2, 4);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate_synthetic_domain(&spec, 9, a.path()).unwrap();
        let pb = generate_synthetic_domain(&spec, 9, b.path()).unwrap();
        for rel in ["manifest.json", "signals/dom-001.edf", "labels/dom-001.csv"] {
            let fa = std::fs::read(a.path().join("dom").join(rel)).unwrap();
            let fb = std::fs::read(b.path().join("dom").join(rel)).unwrap();
            assert_eq!(fa, fb, "{rel}");
        }
        let manifest = load_manifest(&pa).unwrap();
        assert_eq!(manifest.records.len(), 2);
        let (rec, labels) = load_entry(&manifest, &manifest.records[0]).unwrap();
        assert_eq!(rec.samples.len(), 4 * 30 * 64);
        assert_eq!(labels.len(), 4);
        drop(pb);
    }
}
