//! IIR design through analog prototypes and the bilinear transform, realized
//! as cascaded biquads.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// Anti-aliasing low-pass applied at the native sampling rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub stopband_edge_hz: f64,
    pub stopband_atten_db: f64,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            order: 8,
            stopband_edge_hz: 8.0,
            stopband_atten_db: 40.0,
            zero_phase: true,
        }
    }
}

/// Zeros, poles and gain of a rational transfer function.
#[derive(Debug, Clone, PartialEq)]
pub struct Zpk {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
}

/// Analog Chebyshev type II low-pass prototype with its stopband edge at 1 rad/s.
pub fn cheby2_prototype(order: usize, atten_db: f64) -> Zpk {
    let n = order as f64;
    let de = 1.0 / (10f64.powf(0.1 * atten_db) - 1.0).sqrt();
    let mu = (1.0 / de).asinh() / n;
    let odd = order % 2 == 1;
    let zeros: Vec<Complex64> = (0..order)
        .map(|i| -(order as i64) + 1 + 2 * i as i64)
        // the m = 0 term would put a zero at infinity
        .filter(|m| !(odd && *m == 0))
        .map(|m| {
            let s = (m as f64 * PI / (2.0 * n)).sin();
            -(Complex64::i() / s).conj()
        })
        .collect();
    let poles: Vec<Complex64> = (0..order)
        .map(|i| {
            let m = -(order as f64) + 1.0 + 2.0 * i as f64;
            let p = -(Complex64::i() * PI * m / (2.0 * n)).exp();
            let warped = Complex64::new(mu.sinh() * p.re, mu.cosh() * p.im);
            1.0 / warped
        })
        .collect();
    let num: Complex64 = poles.iter().map(|p| -p).product();
    let den: Complex64 = zeros.iter().map(|z| -z).product();
    Zpk {
        zeros,
        poles,
        gain: (num / den).re,
    }
}

/// Analog Butterworth low-pass prototype with its -3 dB point at 1 rad/s.
pub fn butter_prototype(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|i| {
            let m = -(order as f64) + 1.0 + 2.0 * i as f64;
            -(Complex64::i() * PI * m / (2.0 * n)).exp()
        })
        .collect();
    Zpk {
        zeros: Vec::new(),
        poles,
        gain: 1.0,
    }
}

pub fn lowpass_to_lowpass(zpk: &Zpk, wo: f64) -> Zpk {
    let degree = zpk.poles.len() as i32 - zpk.zeros.len() as i32;
    Zpk {
        zeros: zpk.zeros.iter().map(|z| z * wo).collect(),
        poles: zpk.poles.iter().map(|p| p * wo).collect(),
        gain: zpk.gain * wo.powi(degree),
    }
}

pub fn lowpass_to_highpass(zpk: &Zpk, wo: f64) -> Zpk {
    let degree = zpk.poles.len() - zpk.zeros.len();
    let mut zeros: Vec<Complex64> = zpk.zeros.iter().map(|z| wo / z).collect();
    zeros.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    let num: Complex64 = zpk.zeros.iter().map(|z| -z).product();
    let den: Complex64 = zpk.poles.iter().map(|p| -p).product();
    Zpk {
        zeros,
        poles: zpk.poles.iter().map(|p| wo / p).collect(),
        gain: zpk.gain * (num / den).re,
    }
}

/// Bilinear transform to a digital filter at sampling rate `fs`.
pub fn bilinear(zpk: &Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = zpk.poles.len() - zpk.zeros.len();
    let mut zeros: Vec<Complex64> = zpk.zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    let num: Complex64 = zpk.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = zpk.poles.iter().map(|p| fs2 - p).product();
    Zpk {
        zeros,
        poles: zpk.poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect(),
        gain: zpk.gain * (num / den).re,
    }
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f_hz / fs).tan()
}

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form-II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn group_conjugates(roots: &[Complex64]) -> Vec<[Complex64; 2]> {
    let tol = |r: &Complex64| 1e-9 * r.norm().max(1.0);
    let mut upper: Vec<Complex64> = roots.iter().copied().filter(|r| r.im > tol(r)).collect();
    let mut real: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= tol(r)).map(|r| r.re).collect();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    real.sort_by(f64::total_cmp);
    let mut out: Vec<[Complex64; 2]> = upper.into_iter().map(|r| [r, r.conj()]).collect();
    let mut it = real.chunks(2);
    for pair in &mut it {
        let a = Complex64::new(pair[0], 0.0);
        let b = Complex64::new(pair.get(1).copied().unwrap_or(0.0), 0.0);
        out.push([a, b]);
    }
    out
}

/// Monic polynomial with the two roots; a root at the origin makes it first order.
fn quadratic(pair: &[Complex64; 2]) -> [f64; 3] {
    let s = pair[0] + pair[1];
    let p = pair[0] * pair[1];
    [1.0, -s.re, p.re]
}

impl Sos {
    /// Pairs each pole pair with its nearest zero pair; sections are ordered
    /// with the poles closest to the unit circle last.
    pub fn from_zpk(zpk: &Zpk) -> Sos {
        let mut zeros = zpk.zeros.clone();
        while zeros.len() < zpk.poles.len() {
            zeros.push(Complex64::new(0.0, 0.0));
        }
        let mut pole_pairs = group_conjugates(&zpk.poles);
        let mut zero_pairs = group_conjugates(&zeros);
        pole_pairs.sort_by(|a, b| a[0].norm().total_cmp(&b[0].norm()));
        let n = pole_pairs.len();
        let mut sections = Vec::with_capacity(n);
        for pp in pole_pairs.iter().rev() {
            let (best, _) = zero_pairs
                .iter()
                .enumerate()
                .map(|(i, zp)| (i, (zp[0] - pp[0]).norm().min((zp[1] - pp[0]).norm())))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("as many zeros as poles");
            let zp = zero_pairs.remove(best);
            sections.push(Biquad {
                b: quadratic(&zp),
                a: quadratic(pp),
            });
        }
        sections.reverse();
        let per_section = zpk.gain.abs().powf(1.0 / n as f64);
        for (i, s) in sections.iter_mut().enumerate() {
            let g = if i == 0 { per_section * zpk.gain.signum() } else { per_section };
            s.b.iter_mut().for_each(|b| *b *= g);
        }
        Sos { sections }
    }

    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = (-Complex64::i() * 2.0 * PI * f_hz / fs).exp();
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, f_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(f_hz, fs).norm().log10()
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Biquad::dc_gain).product()
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        let mut y = x.to_vec();
        self.filter_in_place(&mut y, &mut state);
        y
    }

    fn filter_in_place(&self, y: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let [mut z1, mut z2] = *z;
            for v in y.iter_mut() {
                let x = *v;
                let out = b0 * x + z1;
                z1 = b1 * x - a1 * out + z2;
                z2 = b2 * x - a2 * out;
                *v = out;
            }
            *z = [z1, z2];
        }
    }

    /// Initial states that make a constant input of 1 pass without transient.
    pub fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [scale * z1, scale * z2];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Samples of odd extension added on each side by [`Sos::filtfilt`].
    pub fn edge_padding(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Forward-backward filtering: zero phase, squared magnitude response.
    /// Edges are extended by odd reflection and both passes start from the
    /// steady state matching the first sample.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>, DspError> {
        let pad = self.edge_padding();
        if x.len() <= pad {
            return Err(DspError::SignalTooShort {
                len: x.len(),
                min: pad + 1,
            });
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let mut state = scaled(ext[0]);
        self.filter_in_place(&mut ext, &mut state);
        ext.reverse();
        let mut state = scaled(ext[0]);
        self.filter_in_place(&mut ext, &mut state);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    pub fn cascade(mut self, other: Sos) -> Sos {
        self.sections.extend(other.sections);
        self
    }
}

/// Digital Chebyshev type II low-pass per `spec`.
pub fn design_cheby2(spec: &FilterSpec, fs: f64) -> Result<Sos, DspError> {
    if spec.order < 2 || spec.order % 2 != 0 {
        return Err(DspError::InvalidSpec(format!(
            "order must be even and at least 2, got {}",
            spec.order
        )));
    }
    if !(spec.stopband_atten_db > 0.0) {
        return Err(DspError::InvalidSpec("stopband attenuation must be positive".into()));
    }
    if !(fs > 2.0 * spec.stopband_edge_hz) {
        return Err(DspError::InvalidSampling {
            fs,
            min_exclusive: 2.0 * spec.stopband_edge_hz,
        });
    }
    let analog = lowpass_to_lowpass(
        &cheby2_prototype(spec.order, spec.stopband_atten_db),
        prewarp(spec.stopband_edge_hz, fs),
    );
    Ok(Sos::from_zpk(&bilinear(&analog, fs)))
}

/// Digital Butterworth high-pass with -3 dB at `cutoff_hz`.
pub fn design_butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Sos, DspError> {
    if !(fs > 2.0 * cutoff_hz) {
        return Err(DspError::InvalidSampling {
            fs,
            min_exclusive: 2.0 * cutoff_hz,
        });
    }
    let analog = lowpass_to_highpass(&butter_prototype(order), prewarp(cutoff_hz, fs));
    Ok(Sos::from_zpk(&bilinear(&analog, fs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(fs: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| i as f64 * (fs / 2.0) / (n - 1) as f64)
    }

    #[test]
    fn four_sections_with_unit_dc_gain() {
        for fs in [25.0, 75.0, 128.0, 256.0] {
            let sos = design_cheby2(&FilterSpec::default(), fs).unwrap();
            assert_eq!(sos.sections.len(), 4);
            assert!((sos.dc_gain() - 1.0).abs() < 1e-9, "fs {fs}: {}", sos.dc_gain());
            assert!((sos.response(0.0, fs).norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stopband_at_12hz_for_256() {
        let sos = design_cheby2(&FilterSpec::default(), 256.0).unwrap();
        assert!(sos.magnitude_db(12.0, 256.0) <= -40.0);
    }

    #[test]
    fn passband_is_flat_and_monotone() {
        let fs = 128.0;
        let sos = design_cheby2(&FilterSpec::default(), fs).unwrap();
        assert!(sos.magnitude_db(4.0, fs) >= -1.0);
        let mut prev = f64::INFINITY;
        for f in grid(fs, 4096).take_while(|f| *f <= 6.0) {
            let m = sos.response(f, fs).norm();
            assert!(m <= prev + 1e-12, "{f} Hz rises: {m} > {prev}");
            prev = m;
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            design_cheby2(&FilterSpec::default(), 16.0),
            Err(DspError::InvalidSampling { .. })
        ));
        let odd = FilterSpec {
            order: 7,
            ..FilterSpec::default()
        };
        assert!(matches!(design_cheby2(&odd, 128.0), Err(DspError::InvalidSpec(_))));
    }

    #[test]
    fn highpass_blocks_dc() {
        let sos = design_butter_highpass(2, 0.5, 128.0).unwrap();
        assert!(sos.response(0.0, 128.0).norm() < 1e-12);
        assert!((sos.magnitude_db(0.5, 128.0) + 3.0103).abs() < 1e-3);
        assert!(sos.magnitude_db(5.0, 128.0).abs() < 0.01);
    }

    #[test]
    fn step_states_remove_transient() {
        let sos = design_cheby2(&FilterSpec::default(), 128.0).unwrap();
        let mut state = sos.step_states();
        let mut y = vec![1.0; 64];
        sos.filter_in_place(&mut y, &mut state);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn filtfilt_needs_room_for_padding() {
        let sos = design_cheby2(&FilterSpec::default(), 128.0).unwrap();
        assert!(matches!(
            sos.filtfilt(&[0.0; 27]),
            Err(DspError::SignalTooShort { .. })
        ));
        assert!(sos.filtfilt(&[0.0; 28]).is_ok());
    }
}
