use crate::error::{Error, Result};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney Mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (logstep() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// Triangular, area-normalized Mel filters spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    /// Non-zero column span `[start, end)` of each filter.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, n_mels: usize, fs: u32) -> Result<Self> {
        if n_mels == 0 || n_mels >= n_fft / 2 {
            return Err(Error::InvalidArgument(format!(
                "need 0 < n_mels < n_fft/2, got {n_mels} for n_fft {n_fft}"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let nyquist = fs as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * fs as f64 / n_fft as f64)
            .collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        let mut spans = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            let (mut start, mut end) = (n_bins, 0);
            for (k, &f) in bin_hz.iter().enumerate() {
                let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                if w > 0.0 {
                    row[k] = w * norm;
                    start = start.min(k);
                    end = k + 1;
                }
            }
            if end <= start {
                return Err(Error::InvalidArgument(format!(
                    "Mel filter {m} covers no FFT bin; use fewer filters or a larger n_fft"
                )));
            }
            spans.push((start, end));
        }
        Ok(Self {
            n_mels,
            n_bins,
            weights,
            spans,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weight(&self, m: usize, k: usize) -> f64 {
        self.weights[m * self.n_bins + k]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `out = W . power`.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (s, e) = self.spans[m];
            let row = &self.weights[m * self.n_bins..];
            *o = (s..e).map(|k| row[k] * power[k]).sum();
        }
    }

    /// `out = W^T . mel`.
    fn apply_transpose(&self, mel: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (m, &v) in mel.iter().enumerate() {
            let (s, e) = self.spans[m];
            let row = &self.weights[m * self.n_bins..];
            for k in s..e {
                out[k] += row[k] * v;
            }
        }
    }

    /// Non-negative least-squares estimate of linear power given Mel energies.
    ///
    /// Starts from a per-filter flat-spectrum guess and refines with multiplicative
    /// updates, which keep every bin non-negative.
    pub fn nnls(&self, mel: &[f64], iters: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_bins];
        let mut cover = vec![0.0; self.n_bins];
        for m in 0..self.n_mels {
            let (s, e) = self.spans[m];
            let row = self.row(m);
            let area: f64 = row[s..e].iter().sum();
            let level = mel[m].max(0.0) / area;
            for k in s..e {
                p[k] += row[k] * level;
                cover[k] += row[k];
            }
        }
        for (v, c) in p.iter_mut().zip(&cover) {
            *v = if *c > 0.0 { *v / c } else { 0.0 };
        }
        let mut numer = vec![0.0; self.n_bins];
        self.apply_transpose(mel, &mut numer);
        let mut fitted = vec![0.0; self.n_mels];
        let mut denom = vec![0.0; self.n_bins];
        for _ in 0..iters {
            self.apply(&p, &mut fitted);
            self.apply_transpose(&fitted, &mut denom);
            for k in 0..self.n_bins {
                if denom[k] > 0.0 {
                    p[k] *= numer[k] / denom[k];
                }
            }
        }
        p
    }
}
