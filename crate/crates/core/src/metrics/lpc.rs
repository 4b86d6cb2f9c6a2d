//! LPC analysis and the two LPC-based intrusive measures: cepstral distance and
//! log-likelihood ratio.

use std::f64::consts::LN_10;

use super::{frames, MetricFrameConfig};
use crate::error::{Error, Result};
use crate::signal::AudioSignal;

const CD_MAX: f64 = 10.0;
const VOICED_FLOOR_DB: f64 = -60.0;
const LLR_KEEP: f64 = 0.95;

/// Biased autocorrelation `r[0..=order]`.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| {
            x.iter()
                .zip(x.iter().skip(lag))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Levinson-Durbin recursion.
///
/// Returns `[1, a1, .., ap]` for the error filter `A(z) = 1 + sum a_k z^-k` and the
/// final prediction error, or `None` when the autocorrelation is singular.
pub fn levinson(r: &[f64]) -> Option<(Vec<f64>, f64)> {
    let order = r.len() - 1;
    if !(r[0] > 0.0) {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    let mut prev = a.clone();
    for i in 1..=order {
        let acc: f64 = (1..i).map(|j| prev[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        a[i] = k;
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        err *= 1.0 - k * k;
        if !(err > r[0] * 1e-12) {
            return None;
        }
        prev.copy_from_slice(&a);
    }
    Some((a, err))
}

/// Cepstrum of `1 / A(z)` for `n = 1..=count` via the standard recursion.
pub fn lpc_cepstrum(a: &[f64], count: usize) -> Vec<f64> {
    let p = a.len() - 1;
    let mut c = vec![0.0; count + 1];
    for n in 1..=count {
        let mut acc = if n <= p { -a[n] } else { 0.0 };
        for k in 1..n {
            if n - k <= p {
                acc -= (k as f64 / n as f64) * c[k] * a[n - k];
            }
        }
        c[n] = acc;
    }
    c.remove(0);
    c
}

/// `a R a^T` for a symmetric Toeplitz `R` built from `r`.
pub(crate) fn quadratic_form(a: &[f64], r: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for (j, aj) in a.iter().enumerate() {
            total += ai * aj * r[i.abs_diff(j)];
        }
    }
    total
}

/// Per-frame cepstral distances between aligned signals.
pub fn cepstral_distance_frames(
    clean: &AudioSignal,
    test: &AudioSignal,
    cfg: &MetricFrameConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let pairs = frames(clean, test, cfg)?;
    let energies: Vec<f64> = pairs.iter().map(|(c, _)| c.iter().map(|v| v * v).sum()).collect();
    let max_e = energies.iter().copied().fold(0.0, f64::max);
    if max_e <= 0.0 {
        return Err(Error::Degenerate("clean signal is silent".into()));
    }
    let gate = max_e * 10f64.powf(VOICED_FLOOR_DB / 10.0);
    let p = cfg.lpc_order;
    let mut out = Vec::new();
    for ((c, t), e) in pairs.iter().zip(&energies) {
        if *e < gate {
            continue;
        }
        let Some((ac, _)) = levinson(&autocorrelation(c, p)) else {
            continue;
        };
        let dist = match levinson(&autocorrelation(t, p)) {
            Some((at, _)) => {
                let cc = lpc_cepstrum(&ac, p);
                let ct = lpc_cepstrum(&at, p);
                let sq: f64 = cc.iter().zip(&ct).map(|(x, y)| (x - y) * (x - y)).sum();
                (10.0 / LN_10) * (2.0 * sq).sqrt()
            }
            // A silent test frame under a voiced clean frame is maximally distant.
            None => CD_MAX,
        };
        out.push(dist.clamp(0.0, CD_MAX));
    }
    if out.is_empty() {
        return Err(Error::Degenerate("no voiced frames to score".into()));
    }
    Ok(out)
}

/// Mean LPC cepstral distance in dB over voiced clean frames.
pub fn cepstral_distance(
    clean: &AudioSignal,
    test: &AudioSignal,
    cfg: &MetricFrameConfig,
) -> Result<f64> {
    let d = cepstral_distance_frames(clean, test, cfg)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Per-frame log-likelihood ratios; frames with singular autocorrelation are skipped.
pub fn llr_frames(clean: &AudioSignal, test: &AudioSignal, cfg: &MetricFrameConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let p = cfg.lpc_order;
    let mut out = Vec::new();
    for (c, t) in frames(clean, test, cfg)? {
        let rc = autocorrelation(&c, p);
        let (Some((ac, _)), Some((at, _))) = (levinson(&rc), levinson(&autocorrelation(&t, p)))
        else {
            continue;
        };
        let num = quadratic_form(&at, &rc);
        let den = quadratic_form(&ac, &rc);
        // The clean LPC minimizes the quadratic form; rounding may push it a hair lower.
        out.push((num / den).ln().max(0.0));
    }
    if out.is_empty() {
        return Err(Error::Degenerate("no frame with a usable autocorrelation".into()));
    }
    Ok(out)
}

/// Mean of the smallest 95% of per-frame LLR values.
pub fn llr(clean: &AudioSignal, test: &AudioSignal, cfg: &MetricFrameConfig) -> Result<f64> {
    let mut v = llr_frames(clean, test, cfg)?;
    v.sort_by(f64::total_cmp);
    let keep = ((v.len() as f64 * LLR_KEEP).round() as usize).clamp(1, v.len());
    Ok(v[..keep].iter().sum::<f64>() / keep as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SpeechLike;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn ar2(c1: f64, c2: f64, n: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y1 = if i >= 1 { y[i - 1] } else { 0.0 };
            let y2 = if i >= 2 { y[i - 2] } else { 0.0 };
            y[i] = 0.1 * e + c1 * y1 + c2 * y2;
        }
        AudioSignal::new(y, 16000).unwrap()
    }

    /// Normal equations by Gaussian elimination with partial pivoting.
    fn lpc_by_elimination(frame: &[f64], p: usize) -> Vec<f64> {
        let r: Vec<f64> = (0..=p)
            .map(|k| (0..frame.len() - k).map(|n| frame[n] * frame[n + k]).sum())
            .collect();
        let mut m: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| r[(i as isize - j as isize).unsigned_abs()]).collect();
                row.push(-r[i + 1]);
                row
            })
            .collect();
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            for row in 0..p {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for k in col..=p {
                        let v = m[col][k];
                        m[row][k] -= f * v;
                    }
                }
            }
        }
        let mut a = vec![1.0];
        a.extend((0..p).map(|i| m[i][p] / m[i][i]));
        a
    }

    /// Cepstrum of 1/A from a dense DFT of log|1/A|; twice the real cepstrum for n >= 1.
    fn cepstrum_by_dft(a: &[f64], count: usize) -> Vec<f64> {
        let n = 4096;
        let logmag: Vec<f64> = (0..n)
            .map(|k| {
                let w = 2.0 * PI * k as f64 / n as f64;
                let (re, im) = a.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, &c)| {
                    (re + c * (w * i as f64).cos(), im - c * (w * i as f64).sin())
                });
                -0.5 * (re * re + im * im).ln()
            })
            .collect();
        (1..=count)
            .map(|q| {
                2.0 * logmag
                    .iter()
                    .enumerate()
                    .map(|(k, l)| l * (2.0 * PI * (q * k) as f64 / n as f64).cos())
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    }

    fn hann_frames(x: &AudioSignal, len: usize, shift: usize) -> Vec<Vec<f64>> {
        let w: Vec<f64> = (1..=len)
            .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (len + 1) as f64).cos()))
            .collect();
        (0..=(x.len() - len) / shift)
            .map(|f| (0..len).map(|i| x.samples[f * shift + i] * w[i]).collect())
            .collect()
    }

    #[test]
    fn levinson_matches_elimination() {
        let x = ar2(1.3, -0.6, 512, 1);
        let r = autocorrelation(&x.samples, 10);
        let (a, _) = levinson(&r).unwrap();
        let b = lpc_by_elimination(&x.samples, 10);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }

    #[test]
    fn cepstrum_recursion_matches_dft() {
        let a = [1.0, -1.3, 0.6];
        let rec = lpc_cepstrum(&a, 10);
        let dft = cepstrum_by_dft(&a, 10);
        for (u, v) in rec.iter().zip(&dft) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn ar_pair_cepstral_distance_matches_oracle() {
        let cfg = MetricFrameConfig::default();
        let x = ar2(1.3, -0.6, 8000, 11);
        let y = ar2(0.5, -0.3, 8000, 12);
        let got = cepstral_distance(&x, &y, &cfg).unwrap();

        let fx = hann_frames(&x, 512, 256);
        let fy = hann_frames(&y, 512, 256);
        let energies: Vec<f64> = fx.iter().map(|f| f.iter().map(|v| v * v).sum()).collect();
        let max_e = energies.iter().copied().fold(0.0, f64::max);
        let mut total = 0.0;
        let mut count = 0;
        for ((a, b), e) in fx.iter().zip(&fy).zip(&energies) {
            if *e < max_e * 1e-6 {
                continue;
            }
            let ca = cepstrum_by_dft(&lpc_by_elimination(a, 10), 10);
            let cb = cepstrum_by_dft(&lpc_by_elimination(b, 10), 10);
            let sq: f64 = ca.iter().zip(&cb).map(|(p, q)| (p - q) * (p - q)).sum();
            total += (10.0 / 10f64.ln() * (2.0 * sq).sqrt()).min(10.0);
            count += 1;
        }
        let expect = total / count as f64;
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        assert!(got > 0.5);
    }

    #[test]
    fn ar_pair_llr_matches_oracle() {
        let cfg = MetricFrameConfig::default();
        let x = ar2(1.3, -0.6, 8000, 21);
        let y = ar2(0.9, -0.2, 8000, 22);
        let got = llr(&x, &y, &cfg).unwrap();

        let fx = hann_frames(&x, 512, 256);
        let fy = hann_frames(&y, 512, 256);
        let mut vals: Vec<f64> = fx
            .iter()
            .zip(&fy)
            .map(|(a, b)| {
                let ac = lpc_by_elimination(a, 10);
                let at = lpc_by_elimination(b, 10);
                let r: Vec<f64> = (0..=10)
                    .map(|k| (0..a.len() - k).map(|n| a[n] * a[n + k]).sum())
                    .collect();
                let form = |v: &[f64]| {
                    let mut s = 0.0;
                    for i in 0..=10 {
                        for j in 0..=10 {
                            s += v[i] * v[j] * r[(i as isize - j as isize).unsigned_abs()];
                        }
                    }
                    s
                };
                (form(&at) / form(&ac)).ln()
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        let keep = (vals.len() as f64 * 0.95).round() as usize;
        let expect = vals[..keep].iter().sum::<f64>() / keep as f64;
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn identities() {
        let cfg = MetricFrameConfig::default();
        let x = SpeechLike::default().generate(5);
        assert_eq!(cepstral_distance(&x, &x, &cfg).unwrap(), 0.0);
        assert_eq!(llr(&x, &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn frame_values_are_bounded() {
        let cfg = MetricFrameConfig::default();
        let x = SpeechLike::default().generate(6);
        let y = ar2(0.2, 0.1, x.len(), 3);
        assert!(cepstral_distance_frames(&x, &y, &cfg)
            .unwrap()
            .iter()
            .all(|&d| (0.0..=10.0).contains(&d)));
        assert!(llr_frames(&x, &y, &cfg).unwrap().iter().all(|&v| v >= 0.0));
        // Swapped arguments still evaluate.
        cepstral_distance(&y, &x, &cfg).unwrap();
        llr(&y, &x, &cfg).unwrap();
    }

    #[test]
    fn silent_input_is_degenerate() {
        let cfg = MetricFrameConfig::default();
        let z = AudioSignal::zeros(4000, 16000);
        assert!(matches!(cepstral_distance(&z, &z, &cfg), Err(Error::Degenerate(_))));
        assert!(matches!(llr(&z, &z, &cfg), Err(Error::Degenerate(_))));
    }
}
