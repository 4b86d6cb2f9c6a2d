//! Speech-to-reverberation modulation energy ratio.
//!
//! Gammatone analysis, Hilbert envelopes, and an 8-band modulation filterbank; the
//! score is the low-band (4 lowest) to high-band (4 highest) modulation energy ratio.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{convolve_fft, AudioSignal};

#[derive(Debug, Clone, PartialEq)]
pub struct SrmrConfig {
    pub n_channels: usize,
    pub low_freq: f64,
    /// Highest center frequency as a fraction of Nyquist.
    pub high_fraction: f64,
    pub n_mod_bands: usize,
    pub mod_low: f64,
    pub mod_high: f64,
    pub mod_q: f64,
    pub frame_ms: f64,
    pub shift_ms: f64,
    /// Gammatone impulse-response length.
    pub filter_ms: f64,
}

impl Default for SrmrConfig {
    fn default() -> Self {
        Self {
            n_channels: 23,
            low_freq: 125.0,
            high_fraction: 0.9,
            n_mod_bands: 8,
            mod_low: 4.0,
            mod_high: 128.0,
            mod_q: 2.0,
            frame_ms: 256.0,
            shift_ms: 64.0,
            filter_ms: 64.0,
        }
    }
}

fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

fn erb_rate(f: f64) -> f64 {
    21.4 * (4.37 * f / 1000.0 + 1.0).log10()
}

fn erb_rate_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Center frequencies uniformly spaced on the ERB-rate scale.
pub(crate) fn erb_centers(low: f64, high: f64, n: usize) -> Vec<f64> {
    let (a, b) = (erb_rate(low), erb_rate(high));
    (0..n)
        .map(|i| {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            erb_rate_inv(a + frac * (b - a))
        })
        .collect()
}

/// Fourth-order gammatone impulse response with unit gain at `fc`.
fn gammatone(fc: f64, fs: f64, len: usize) -> Vec<f64> {
    let b = 1.019 * erb(fc);
    let mut g: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            t.powi(3) * (-2.0 * PI * b * t).exp() * (2.0 * PI * fc * t).cos()
        })
        .collect();
    let w = 2.0 * PI * fc / fs;
    let resp = g
        .iter()
        .enumerate()
        .fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
            acc + Complex64::from_polar(v, -w * n as f64)
        });
    let gain = resp.norm();
    g.iter_mut().for_each(|v| *v /= gain);
    g
}

/// Magnitude of the analytic signal.
fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len().next_power_of_two();
    let mut buf = fft::real_forward(x, n);
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || k == n / 2 {
            continue;
        }
        if k < n / 2 {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft::inverse(&mut buf);
    buf[..x.len()].iter().map(|c| c.norm()).collect()
}

/// Constant-peak-gain band-pass biquad (RBJ cookbook), as `(b, a)` with `a0 = 1`.
fn bandpass(fc: f64, q: f64, fs: f64) -> ([f64; 3], [f64; 2]) {
    let w0 = 2.0 * PI * fc / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    (
        [alpha / a0, 0.0, -alpha / a0],
        [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
    )
}

fn biquad(x: &[f64], b: &[f64; 3], a: &[f64; 2]) -> Vec<f64> {
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b[0] * v + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Modulation-band center frequencies, log-spaced between the configured limits.
pub(crate) fn mod_centers(cfg: &SrmrConfig) -> Vec<f64> {
    let n = cfg.n_mod_bands;
    let ratio = (cfg.mod_high / cfg.mod_low).ln();
    (0..n)
        .map(|i| cfg.mod_low * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Modulation energy per band, summed over gammatone channels and frames.
pub fn srmr_band_energies(x: &AudioSignal, cfg: &SrmrConfig) -> Result<Vec<f64>> {
    if cfg.n_mod_bands < 2 || cfg.n_mod_bands % 2 != 0 || cfg.n_channels == 0 {
        return Err(Error::InvalidArgument(
            "SRMR needs at least one channel and an even number (>= 2) of modulation bands".into(),
        ));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("SRMR input"));
    }
    let fs = x.sample_rate as f64;
    if x.duration() < 1.0 {
        log::warn!("SRMR on {:.2} s of audio; at least 1 s is recommended", x.duration());
    }
    let frame = (cfg.frame_ms * fs / 1000.0).round() as usize;
    let shift = (cfg.shift_ms * fs / 1000.0).round() as usize;
    let win = hamming(frame);
    let filter_len = (cfg.filter_ms * fs / 1000.0).round() as usize;
    let centers = erb_centers(cfg.low_freq, cfg.high_fraction * fs / 2.0, cfg.n_channels);
    let filters: Vec<_> = mod_centers(cfg)
        .into_iter()
        .map(|fc| bandpass(fc, cfg.mod_q, fs))
        .collect();

    let mut energy = vec![0.0; cfg.n_mod_bands];
    for fc in centers {
        let g = gammatone(fc, fs, filter_len);
        let mut band = convolve_fft(&x.samples, &g);
        band.truncate(x.len());
        let env = hilbert_envelope(&band);
        for (e, (b, a)) in energy.iter_mut().zip(&filters) {
            let m = biquad(&env, b, a);
            *e += framed_energy(&m, &win, shift);
        }
    }
    Ok(energy)
}

/// Sum of windowed frame energies; a signal shorter than one frame is zero-padded.
fn framed_energy(m: &[f64], win: &[f64], shift: usize) -> f64 {
    let frame = win.len();
    let count = if m.len() <= frame { 1 } else { (m.len() - frame).div_ceil(shift) + 1 };
    let mut total = 0.0;
    for f in 0..count {
        let start = f * shift;
        for (i, w) in win.iter().enumerate() {
            let v = m.get(start + i).copied().unwrap_or(0.0) * w;
            total += v * v;
        }
    }
    total
}

/// Ratio of modulation energy in the lower half of the bands to the upper half.
pub fn srmr(x: &AudioSignal, cfg: &SrmrConfig) -> Result<f64> {
    let e = srmr_band_energies(x, cfg)?;
    let half = e.len() / 2;
    let low: f64 = e[..half].iter().sum();
    let high: f64 = e[half..].iter().sum();
    if !(high > 0.0) || !(low > 0.0) {
        return Err(Error::Degenerate("SRMR undefined for silent input".into()));
    }
    Ok(low / high)
}
