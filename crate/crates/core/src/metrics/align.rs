//! Cross-correlation time alignment for the intrusive measures.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::AudioSignal;

pub const MAX_LAG_MS: f64 = 64.0;
/// Peak normalized correlation below which the signals are treated as unrelated.
const MIN_CORRELATION: f64 = 0.1;

/// Outcome of an alignment search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Samples by which `test` lags `clean`.
    pub lag: isize,
    /// Normalized correlation at the chosen lag.
    pub correlation: f64,
    /// False when the correlation fell below the confidence threshold and no shift was applied.
    pub confident: bool,
}

/// Shifts `test` to best match `clean` and trims both to their common length.
pub fn align(clean: &AudioSignal, test: &AudioSignal) -> Result<(AudioSignal, AudioSignal)> {
    align_with_lag(clean, test).map(|(c, t, _)| (c, t))
}

pub fn align_with_lag(
    clean: &AudioSignal,
    test: &AudioSignal,
) -> Result<(AudioSignal, AudioSignal, Alignment)> {
    if clean.sample_rate != test.sample_rate {
        return Err(Error::SampleRateMismatch(clean.sample_rate, test.sample_rate));
    }
    if clean.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("alignment input"));
    }
    let max_lag = (MAX_LAG_MS * clean.sample_rate as f64 / 1000.0).round() as isize;
    let (lag, correlation) = best_lag(&clean.samples, &test.samples, max_lag);
    let confident = correlation >= MIN_CORRELATION;
    let lag = if confident {
        lag
    } else {
        log::warn!(
            "alignment: peak correlation {correlation:.3} below {MIN_CORRELATION}, signals look unrelated; using zero shift"
        );
        0
    };
    // test[n + lag] pairs with clean[n].
    let (c0, t0) = if lag >= 0 { (0, lag as usize) } else { ((-lag) as usize, 0) };
    let len = (clean.len().saturating_sub(c0)).min(test.len().saturating_sub(t0));
    let cut = |s: &AudioSignal, start: usize| {
        AudioSignal::new(s.samples[start..start + len].to_vec(), s.sample_rate)
    };
    Ok((
        cut(clean, c0)?,
        cut(test, t0)?,
        Alignment {
            lag,
            correlation,
            confident,
        },
    ))
}

/// Lag in `[-max_lag, max_lag]` maximizing `sum clean[n] test[n + lag]`, with the
/// correlation normalized by the full-signal energies.
fn best_lag(clean: &[f64], test: &[f64], max_lag: isize) -> (isize, f64) {
    let n = (clean.len() + test.len()).next_power_of_two();
    let a = fft::real_forward(clean, n);
    let b = fft::real_forward(test, n);
    let mut prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
    fft::inverse(&mut prod);
    let at = |lag: isize| -> f64 {
        let idx = if lag >= 0 { lag as usize } else { n - (-lag) as usize };
        prod[idx].re
    };
    let norm = (clean.iter().map(|v| v * v).sum::<f64>() * test.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let lo = (-max_lag).max(-(clean.len() as isize - 1));
    let hi = max_lag.min(test.len() as isize - 1);
    let mut best: (isize, f64) = (0, f64::NEG_INFINITY);
    for lag in lo..=hi {
        let v = at(lag);
        if v > best.1 || (v == best.1 && lag.abs() < best.0.abs()) {
            best = (lag, v);
        }
    }
    if norm > 0.0 {
        (best.0, best.1 / norm)
    } else {
        (0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SpeechLike;

    #[test]
    fn identical_signals_have_zero_lag() {
        let x = SpeechLike::default().generate(1);
        let (c, t, a) = align_with_lag(&x, &x).unwrap();
        assert_eq!(a.lag, 0);
        assert!(a.confident);
        assert!((a.correlation - 1.0).abs() < 1e-9);
        assert_eq!(c, t);
    }

    #[test]
    fn recovers_constructed_delay() {
        let x = SpeechLike::default().generate(2);
        for d in [37isize, -250, 1000] {
            let samples: Vec<f64> = if d >= 0 {
                std::iter::repeat(0.0).take(d as usize).chain(x.samples.iter().copied()).collect()
            } else {
                x.samples[(-d) as usize..].to_vec()
            };
            let y = AudioSignal::new(samples, 16000).unwrap();
            let (c, t, a) = align_with_lag(&x, &y).unwrap();
            assert_eq!(a.lag, d);
            assert_eq!(c.len(), t.len());
            assert_eq!(c.samples[100..200], t.samples[100..200]);
        }
    }

    #[test]
    fn delay_beyond_window_is_not_found() {
        let x = SpeechLike::default().generate(3);
        let mut s = vec![0.0; 2000];
        s.extend_from_slice(&x.samples);
        let y = AudioSignal::new(s, 16000).unwrap();
        let (_, _, a) = align_with_lag(&x, &y).unwrap();
        assert!(a.lag.abs() <= 1024);
    }

    #[test]
    fn unrelated_signals_fall_back_to_zero_shift() {
        let x = SpeechLike::default().generate(4);
        let mut r = x.samples.clone();
        r.reverse();
        // Time reversal keeps the spectrum but destroys the waveform match; a
        // sign-alternated copy removes what little correlation survives.
        for (i, v) in r.iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = -*v;
            }
        }
        let y = AudioSignal::new(r, 16000).unwrap();
        let (c, t, a) = align_with_lag(&x, &y).unwrap();
        assert!(!a.confident, "correlation {}", a.correlation);
        assert_eq!(a.lag, 0);
        assert_eq!(c.len(), t.len());
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let a = AudioSignal::zeros(10, 16000);
        let b = AudioSignal::zeros(10, 8000);
        assert!(matches!(align(&a, &b), Err(Error::SampleRateMismatch(..))));
    }
}
