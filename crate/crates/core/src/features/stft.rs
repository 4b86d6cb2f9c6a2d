use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{HOP, N_FFT};
use crate::error::{Error, Result};
use crate::fft;
use crate::signal::AudioSignal;

/// Complex STFT frames, stored frame-major (`bins()` values per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<Complex64>,
    pub n_frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analyzed signal, used to trim the inverse.
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn empty(n_fft: usize, hop: usize, sample_rate: u32, n_frames: usize, n_samples: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); (n_fft / 2 + 1) * n_frames],
            n_frames,
            n_fft,
            hop,
            sample_rate,
            n_samples,
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let b = self.bins();
        &self.data[t * b..(t + 1) * b]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let b = self.bins();
        &mut self.data[t * b..(t + 1) * b]
    }

    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins() + f]
    }

    pub fn set(&mut self, t: usize, f: usize, v: Complex64) {
        let b = self.bins();
        self.data[t * b + f] = v;
    }

    /// Copies out the time sequence of one frequency bin.
    pub fn bin_series(&self, f: usize) -> Vec<Complex64> {
        (0..self.n_frames).map(|t| self.get(t, f)).collect()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * gain).collect(),
            ..self.clone()
        }
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflection index into `0..len` for a possibly out-of-range position.
fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period.max(1));
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Centered Hann STFT with `n_fft = 2048`, `hop = 512` and reflection padding.
pub fn stft(x: &AudioSignal) -> Result<Spectrogram> {
    stft_with(x, N_FFT, HOP)
}

pub fn stft_with(x: &AudioSignal, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if x.len() < n_fft {
        return Err(Error::TooShort {
            needed: n_fft,
            got: x.len(),
        });
    }
    if hop == 0 || n_fft < 2 {
        return Err(Error::InvalidArgument("n_fft >= 2 and hop > 0 required".into()));
    }
    let len = x.len();
    let n_frames = 1 + len.div_ceil(hop);
    let half = (n_fft / 2) as isize;
    let window = hann(n_fft);
    let mut spec = Spectrogram::empty(n_fft, hop, x.sample_rate, n_frames, len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = (t * hop) as isize - half;
        for (n, b) in buf.iter_mut().enumerate() {
            let pos = start + n as isize;
            // Reflect on the left, reflect up to n_fft/2 past the end, zeros beyond.
            let v = if pos < len as isize + half {
                x.samples[reflect(pos, len)]
            } else {
                0.0
            };
            *b = Complex64::new(v * window[n], 0.0);
        }
        fft::forward(&mut buf);
        spec.frame_mut(t).copy_from_slice(&buf[..n_fft / 2 + 1]);
    }
    Ok(spec)
}

/// Weighted overlap-add inverse normalized by the summed squared window.
pub fn istft(spec: &Spectrogram) -> Result<AudioSignal> {
    let n_fft = spec.n_fft;
    let bins = spec.bins();
    if spec.data.len() != bins * spec.n_frames {
        return Err(Error::Shape("spectrogram data does not match its frame count".into()));
    }
    let window = hann(n_fft);
    let total = (spec.n_frames.saturating_sub(1)) * spec.hop + n_fft;
    let mut ola = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        buf[..bins].copy_from_slice(frame);
        for k in bins..n_fft {
            buf[k] = frame[n_fft - k].conj();
        }
        // DC and Nyquist of a real signal are real.
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        fft::inverse(&mut buf);
        let offset = t * spec.hop;
        for n in 0..n_fft {
            ola[offset + n] += buf[n].re * window[n];
            wsum[offset + n] += window[n] * window[n];
        }
    }
    let half = n_fft / 2;
    let samples = (0..spec.n_samples)
        .map(|i| {
            let j = i + half;
            if j < total && wsum[j] > 1e-10 {
                ola[j] / wsum[j]
            } else {
                0.0
            }
        })
        .collect();
    AudioSignal::new(samples, spec.sample_rate)
}
