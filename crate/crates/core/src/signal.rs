//! Time-domain primitives: the reverberant signal model `y = x * h + n`,
//! early/late impulse-response splitting and SNR-controlled noise mixing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Below this many multiply-adds the direct sum is cheaper than the FFT path.
const DIRECT_CONV_LIMIT: usize = 1 << 15;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }
}

/// Room impulse response taps with the index of the direct-sound peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub direct_path_index: usize,
}

impl Rir {
    pub fn new(taps: Vec<f64>, sample_rate: u32, direct_path_index: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::EmptyInput("impulse response"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite impulse response tap".into()));
        }
        if taps.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("impulse response is all zeros".into()));
        }
        if direct_path_index >= taps.len() {
            return Err(Error::InvalidArgument(format!(
                "direct path index {direct_path_index} outside {} taps",
                taps.len()
            )));
        }
        Ok(Self {
            taps,
            sample_rate,
            direct_path_index,
        })
    }

    /// Builds an RIR whose direct path is taken as the largest-magnitude tap.
    pub fn from_taps(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let direct = taps
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        Self::new(taps, sample_rate, direct)
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Rescales so the direct-path tap has unit magnitude.
    pub fn normalized_to_direct(&self) -> Self {
        let peak = self.taps[self.direct_path_index].abs();
        let gain = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        Self {
            taps: self.taps.iter().map(|v| v * gain).collect(),
            ..self.clone()
        }
    }
}

/// Full linear convolution, `len(x) + len(h) - 1` samples long.
pub fn convolve(x: &AudioSignal, h: &Rir) -> Result<AudioSignal> {
    if x.sample_rate != h.sample_rate {
        return Err(Error::SampleRateMismatch(x.sample_rate, h.sample_rate));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("signal"));
    }
    if h.is_empty() {
        return Err(Error::EmptyInput("impulse response"));
    }
    Ok(AudioSignal {
        samples: convolve_slices(&x.samples, &h.taps),
        sample_rate: x.sample_rate,
    })
}

/// Linear convolution of two non-empty slices; picks direct or FFT evaluation by size.
pub fn convolve_slices(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    if a.len().saturating_mul(b.len()) <= DIRECT_CONV_LIMIT {
        convolve_direct(a, b)
    } else {
        convolve_fft(a, b)
    }
}

pub(crate) fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &av) in a.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        for (o, &bv) in out[i..].iter_mut().zip(b) {
            *o += av * bv;
        }
    }
    out
}

pub(crate) fn convolve_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fa = fft::real_forward(a, n);
    let fb = fft::real_forward(b, n);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    fft::inverse(&mut prod);
    prod.truncate(out_len);
    prod.into_iter().map(|c| c.re).collect()
}

/// Default early/late boundary after the direct path.
pub const DEFAULT_EARLY_MS: f64 = 50.0;

/// Index of the first late-reverberation tap for a boundary in milliseconds.
pub fn split_index(h: &Rir, boundary_ms: f64) -> usize {
    let offset = (boundary_ms * h.sample_rate as f64 / 1000.0).round() as usize;
    h.direct_path_index.saturating_add(offset)
}

/// Splits `h` into early and late parts that sum back to `h` exactly.
///
/// Taps before `direct_path_index + boundary` go to the early part, the rest to the
/// late part. Either half may be all zeros.
pub fn split_rir(h: &Rir, boundary_ms: f64) -> Result<(Rir, Rir)> {
    if !(boundary_ms >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "boundary must be non-negative, got {boundary_ms}"
        )));
    }
    let split = split_index(h, boundary_ms).min(h.taps.len());
    let mut early = h.taps.clone();
    let mut late = vec![0.0; h.taps.len()];
    late[split..].copy_from_slice(&h.taps[split..]);
    early[split..].iter_mut().for_each(|v| *v = 0.0);
    let part = |taps| Rir {
        taps,
        sample_rate: h.sample_rate,
        direct_path_index: h.direct_path_index,
    };
    Ok((part(early), part(late)))
}

/// Adds white Gaussian noise so that the signal-to-noise power ratio is exactly `snr_db`.
pub fn add_noise_at_snr(y: &AudioSignal, snr_db: f64, seed: u64) -> Result<AudioSignal> {
    let p_signal = y.power();
    if p_signal <= 0.0 {
        return Err(Error::ZeroPower);
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr must be finite, got {snr_db}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..y.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = y
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(AudioSignal {
        samples,
        sample_rate: y.sample_rate,
    })
}

/// `10 log10(sum clean^2 / sum (noisy - clean)^2)`.
///
/// Returns `f64::INFINITY` when the two signals are identical.
pub fn measure_snr(clean: &AudioSignal, noisy: &AudioSignal) -> Result<f64> {
    if clean.sample_rate != noisy.sample_rate {
        return Err(Error::SampleRateMismatch(clean.sample_rate, noisy.sample_rate));
    }
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch(clean.len(), noisy.len()));
    }
    let signal = clean.energy();
    if signal <= 0.0 {
        return Err(Error::ZeroPower);
    }
    let residual: f64 = clean
        .samples
        .iter()
        .zip(&noisy.samples)
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / residual).log10())
}
