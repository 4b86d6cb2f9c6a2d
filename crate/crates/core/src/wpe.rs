//! Single-channel weighted prediction error dereverberation (FD-NDLP): per
//! frequency bin, a delayed linear predictor of the late reverberation is
//! estimated under a time-varying variance model and subtracted.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::{istft, stft, Spectrogram};
use crate::signal::AudioSignal;

const LOADING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeConfig {
    /// Prediction delay in frames.
    pub delay: usize,
    /// Filter taps per frequency bin.
    pub order: usize,
    pub iterations: usize,
    pub variance_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            delay: 3,
            order: 10,
            iterations: 3,
            variance_floor: 1e-8,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay == 0 || self.order == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "WPE delay, order and iterations must all be at least 1".into(),
            ));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidArgument("WPE variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Result of processing one bin: the estimate, the final prediction filter and the
/// value of `sum |x|^2 / lambda + ln lambda` after each filter update.
#[derive(Debug, Clone)]
pub struct BinTrace {
    pub output: Vec<Complex64>,
    pub filter: Vec<Complex64>,
    /// Weights `1 / lambda` used for the final filter solve.
    pub weights: Vec<f64>,
    pub objective: Vec<f64>,
}

/// Delayed regressor `y[t-d], .., y[t-d-k+1]`, zero before the first frame.
fn regressor(y: &[Complex64], t: usize, cfg: &WpeConfig, out: &mut [Complex64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let lag = cfg.delay + k;
        *o = if t >= lag { y[t - lag] } else { Complex64::new(0.0, 0.0) };
    }
}

/// Solves `R g = r` for Hermitian positive semi-definite `R` (row-major, `n x n`).
///
/// Falls back to diagonal loading of `1e-6 * trace / n`, increased tenfold until
/// the factorization succeeds. An all-zero system yields the zero filter.
pub fn solve_hermitian(r_mat: &[Complex64], rhs: &[Complex64], n: usize) -> Vec<Complex64> {
    let trace: f64 = (0..n).map(|i| r_mat[i * n + i].re).sum();
    if !(trace > 0.0) {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    let mut load = 0.0;
    for attempt in 0..12 {
        let mut a = r_mat.to_vec();
        for i in 0..n {
            a[i * n + i] += load;
        }
        if let Some(l) = cholesky(&mut a, n) {
            return cholesky_solve(l, rhs, n);
        }
        load = LOADING * trace / n as f64 * 10f64.powi(attempt);
    }
    vec![Complex64::new(0.0, 0.0); n]
}

/// In-place lower Cholesky factor `A = L L^H`, or `None` on a non-positive pivot.
fn cholesky(a: &mut [Complex64], n: usize) -> Option<&[Complex64]> {
    let scale = (0..n).map(|i| a[i * n + i].re).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > scale * 1e-13) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / d;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[Complex64], b: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let v = l[i * n + k] * z[k];
            z[i] -= v;
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let v = l[k * n + i].conj() * z[k];
            z[i] -= v;
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Runs the iterations on one bin's time series.
pub fn process_bin(y: &[Complex64], cfg: &WpeConfig) -> BinTrace {
    let k = cfg.order;
    let mut x: Vec<Complex64> = y.to_vec();
    let mut filter = vec![Complex64::new(0.0, 0.0); k];
    let mut weights = vec![0.0; y.len()];
    let mut objective = Vec::with_capacity(cfg.iterations);
    let mut reg = vec![Complex64::new(0.0, 0.0); k];
    for _ in 0..cfg.iterations {
        for (w, v) in weights.iter_mut().zip(&x) {
            *w = 1.0 / v.norm_sqr().max(cfg.variance_floor);
        }
        let mut r_mat = vec![Complex64::new(0.0, 0.0); k * k];
        let mut rhs = vec![Complex64::new(0.0, 0.0); k];
        for t in 0..y.len() {
            regressor(y, t, cfg, &mut reg);
            let w = weights[t];
            for i in 0..k {
                let ri = reg[i] * w;
                rhs[i] += ri * y[t].conj();
                for j in 0..k {
                    r_mat[i * k + j] += ri * reg[j].conj();
                }
            }
        }
        filter = solve_hermitian(&r_mat, &rhs, k);
        // One refinement step against the data residual; the weighted normal
        // equations can be badly conditioned when some frames are nearly predictable.
        let mut corr = vec![Complex64::new(0.0, 0.0); k];
        for t in 0..y.len() {
            regressor(y, t, cfg, &mut reg);
            let pred: Complex64 = filter.iter().zip(&reg).map(|(g, r)| g.conj() * r).sum();
            let e = (y[t] - pred).conj() * weights[t];
            for (c, r) in corr.iter_mut().zip(&reg) {
                *c += r * e;
            }
        }
        for (g, d) in filter.iter_mut().zip(solve_hermitian(&r_mat, &corr, k)) {
            *g += d;
        }
        let mut obj = 0.0;
        for t in 0..y.len() {
            regressor(y, t, cfg, &mut reg);
            let pred: Complex64 = filter.iter().zip(&reg).map(|(g, r)| g.conj() * r).sum();
            x[t] = y[t] - pred;
            obj += x[t].norm_sqr() * weights[t] - weights[t].ln();
        }
        objective.push(obj);
    }
    BinTrace {
        output: x,
        filter,
        weights,
        objective,
    }
}

/// Dereverberates a spectrogram bin by bin.
pub fn fd_ndlp(y: &Spectrogram, cfg: &WpeConfig) -> Result<Spectrogram> {
    fd_ndlp_with_trace(y, cfg).map(|(s, _)| s)
}

/// As [`fd_ndlp`], also returning the per-bin objective after each iteration.
pub fn fd_ndlp_with_trace(y: &Spectrogram, cfg: &WpeConfig) -> Result<(Spectrogram, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if y.n_frames <= cfg.delay + cfg.order {
        return Err(Error::TooShort {
            needed: cfg.delay + cfg.order + 1,
            got: y.n_frames,
        });
    }
    let traces: Vec<BinTrace> = (0..y.bins())
        .into_par_iter()
        .map(|f| process_bin(&y.bin_series(f), cfg))
        .collect();
    let mut out = y.clone();
    let mut objectives = Vec::with_capacity(traces.len());
    for (f, tr) in traces.into_iter().enumerate() {
        for (t, v) in tr.output.iter().enumerate() {
            out.set(t, f, *v);
        }
        objectives.push(tr.objective);
    }
    Ok((out, objectives))
}

/// Waveform in, waveform out, through the analysis STFT and its inverse.
pub fn dereverb_signal(x: &AudioSignal, cfg: &WpeConfig) -> Result<AudioSignal> {
    let spec = stft(x)?;
    istft(&fd_ndlp(&spec, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::HOP;
    use crate::metrics::{srmr, SrmrConfig};
    use crate::rir::{image_source_rir, IsmOptions, RoomSpec};
    use crate::signal::{add_noise_at_snr, convolve};
    use crate::synth::{Excitation, SpeechLike};

    fn reverberant(seed: u64, excitation: Excitation) -> AudioSignal {
        let x = SpeechLike {
            excitation,
            ..Default::default()
        }
        .generate(seed);
        let h = image_source_rir(&RoomSpec::evaluation_room(0.6), &IsmOptions::default())
            .unwrap()
            .normalized_to_direct();
        let y = convolve(&x, &h).unwrap().fit_to(x.len());
        add_noise_at_snr(&y, 35.0, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(WpeConfig::default().validate().is_ok());
        for bad in [
            WpeConfig { delay: 0, ..Default::default() },
            WpeConfig { order: 0, ..Default::default() },
            WpeConfig { iterations: 0, ..Default::default() },
            WpeConfig { variance_floor: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn hermitian_solver_matches_product() {
        let n = 4;
        // R = B B^H + I for a fixed complex B.
        let b: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()))
            .collect();
        let mut r = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    r[i * n + j] += b[i * n + k] * b[j * n + k].conj();
                }
            }
            r[i * n + i] += 1.0;
        }
        let rhs: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let g = solve_hermitian(&r, &rhs, n);
        for i in 0..n {
            let v: Complex64 = (0..n).map(|j| r[i * n + j] * g[j]).sum();
            assert!((v - rhs[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_system_is_loaded_not_fatal() {
        // Rank one: every row equal.
        let n = 3;
        let r = vec![Complex64::new(1.0, 0.0); n * n];
        let rhs = vec![Complex64::new(1.0, 0.0); n];
        let g = solve_hermitian(&r, &rhs, n);
        assert!(g.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        let zero = solve_hermitian(&vec![Complex64::new(0.0, 0.0); 4], &[Complex64::new(0.0, 0.0); 2], 2);
        assert!(zero.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn impulse_frame_passes_through() {
        let mut s = Spectrogram::empty(64, 16, 16000, 30, 16 * 29);
        for f in 0..s.bins() {
            s.set(5, f, Complex64::new(1.0 + f as f64, -0.5));
        }
        let out = fd_ndlp(&s, &WpeConfig::default()).unwrap();
        for (a, b) in out.data.iter().zip(&s.data) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let s = Spectrogram::empty(64, 16, 16000, 13, 200);
        assert!(matches!(fd_ndlp(&s, &WpeConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn objective_is_non_increasing() {
        let y = stft(&reverberant(1, Excitation::Voiced)).unwrap();
        let cfg = WpeConfig {
            iterations: 5,
            ..Default::default()
        };
        let (_, objectives) = fd_ndlp_with_trace(&y, &cfg).unwrap();
        for (f, obj) in objectives.iter().enumerate() {
            for w in obj.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "bin {f}: {obj:?}");
            }
        }
    }

    #[test]
    fn residual_is_orthogonal_to_regressors() {
        let y = stft(&reverberant(2, Excitation::Voiced)).unwrap();
        let cfg = WpeConfig::default();
        let mut reg = vec![Complex64::new(0.0, 0.0); cfg.order];
        for f in [10, 100, 400, 900] {
            let series = y.bin_series(f);
            let tr = process_bin(&series, &cfg);
            let mut corr = vec![Complex64::new(0.0, 0.0); cfg.order];
            let mut ey = 0.0;
            let mut er = vec![0.0; cfg.order];
            for t in 0..series.len() {
                regressor(&series, t, &cfg, &mut reg);
                let w = tr.weights[t];
                ey += series[t].norm_sqr() * w;
                for k in 0..cfg.order {
                    corr[k] += reg[k] * tr.output[t].conj() * w;
                    er[k] += reg[k].norm_sqr() * w;
                }
            }
            for k in 0..cfg.order {
                let scale = (ey * er[k]).sqrt();
                assert!(corr[k].norm() < 1e-6 * scale, "bin {f} tap {k}: {} vs {scale}", corr[k].norm());
            }
        }
    }

    #[test]
    fn scale_equivariant() {
        let y = stft(&reverberant(3, Excitation::Voiced)).unwrap();
        let cfg = WpeConfig::default();
        let a = fd_ndlp(&y, &cfg).unwrap();
        for alpha in [0.25, 3.0] {
            let scaled_cfg = WpeConfig {
                variance_floor: cfg.variance_floor * alpha * alpha,
                ..cfg
            };
            let b = fd_ndlp(&y.scaled(alpha), &scaled_cfg).unwrap();
            let norm: f64 = a.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let err: f64 = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(u, v)| (u * alpha - v).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-9 * norm * alpha, "alpha {alpha}: {}", err / norm / alpha);
        }
    }

    #[test]
    fn deterministic() {
        let y = stft(&reverberant(4, Excitation::Voiced)).unwrap();
        let cfg = WpeConfig::default();
        assert_eq!(fd_ndlp(&y, &cfg).unwrap(), fd_ndlp(&y, &cfg).unwrap());
    }

    #[test]
    fn improves_srmr_on_noise_excited_reverberant_speech() {
        let y = reverberant(5, Excitation::Noise);
        let out = dereverb_signal(&y, &WpeConfig::default()).unwrap();
        assert!((out.len() as isize - y.len() as isize).unsigned_abs() <= HOP);
        let cfg = SrmrConfig::default();
        let before = srmr(&y, &cfg).unwrap();
        let after = srmr(&out, &cfg).unwrap();
        assert!(after > before, "{after} vs {before}");
    }
}
