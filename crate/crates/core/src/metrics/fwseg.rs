//! Frequency-weighted segmental SNR over Mel-spaced magnitude bands.

use super::{frames, MetricFrameConfig};
use crate::error::{Error, Result};
use crate::features::MelFilterbank;
use crate::fft;
use crate::signal::AudioSignal;

pub const FWSEG_BANDS: usize = 25;
pub const FWSEG_MIN: f64 = -10.0;
pub const FWSEG_MAX: f64 = 35.0;
const WEIGHT_EXPONENT: f64 = 0.2;

fn band_magnitudes(frame: &[f64], fb: &MelFilterbank) -> Vec<f64> {
    let spec = fft::real_forward(frame, frame.len());
    let mag: Vec<f64> = spec[..fb.n_bins()].iter().map(|c| c.norm()).collect();
    let mut out = vec![0.0; fb.n_mels()];
    fb.apply(&mag, &mut out);
    out
}

/// Per-frame scores; frames whose clean bands are all silent are skipped.
pub fn fw_snr_seg_frames(
    clean: &AudioSignal,
    test: &AudioSignal,
    cfg: &MetricFrameConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let fb = MelFilterbank::new(cfg.frame_len, FWSEG_BANDS, clean.sample_rate)?;
    let mut out = Vec::new();
    for (c, t) in frames(clean, test, cfg)? {
        let x = band_magnitudes(&c, &fb);
        let y = band_magnitudes(&t, &fb);
        // Accumulated as a shortfall from the ceiling so perfect frames score it exactly.
        let mut num = 0.0;
        let mut den = 0.0;
        for (xj, yj) in x.iter().zip(&y) {
            let w = xj.powf(WEIGHT_EXPONENT);
            if w == 0.0 {
                continue;
            }
            let diff = (xj - yj).powi(2);
            // Band values are clamped too; a perfect band would otherwise be infinite.
            let snr = if diff == 0.0 {
                FWSEG_MAX
            } else {
                (10.0 * (xj * xj / diff).log10()).clamp(FWSEG_MIN, FWSEG_MAX)
            };
            num += w * (FWSEG_MAX - snr);
            den += w;
        }
        if den > 0.0 {
            out.push((FWSEG_MAX - num / den).clamp(FWSEG_MIN, FWSEG_MAX));
        }
    }
    if out.is_empty() {
        return Err(Error::Degenerate("clean signal has no non-silent frame".into()));
    }
    Ok(out)
}

/// Mean of the frame scores in dB.
pub fn fw_snr_seg(clean: &AudioSignal, test: &AudioSignal, cfg: &MetricFrameConfig) -> Result<f64> {
    let v = fw_snr_seg_frames(clean, test, cfg)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SpeechLike;
    use std::f64::consts::PI;

    fn two_frame_signal() -> AudioSignal {
        // 768 samples -> exactly two 512-sample frames at shift 256.
        let s = (0..768)
            .map(|n| {
                let t = n as f64 / 16000.0;
                (2.0 * PI * 440.0 * t).sin() + 0.3 * (2.0 * PI * 2500.0 * t).cos()
            })
            .collect();
        AudioSignal::new(s, 16000).unwrap()
    }

    #[test]
    fn identity_is_ceiling() {
        let x = SpeechLike::default().generate(3);
        assert_eq!(fw_snr_seg(&x, &x, &MetricFrameConfig::default()).unwrap(), 35.0);
    }

    #[test]
    fn scaled_copy_gives_gain_dependent_constant() {
        // With Y = gX every band has |X|/(|X|-|Y|) = 1/(1-g): 0.5 -> 20 log10 2, 0.9 -> 20 dB.
        let cfg = MetricFrameConfig::default();
        let x = two_frame_signal();
        let f = fw_snr_seg_frames(&x, &x.scaled(0.5), &cfg).unwrap();
        assert_eq!(f.len(), 2);
        for v in f {
            assert!((v - 6.020599913279624).abs() < 1e-9, "{v}");
        }
        let v = fw_snr_seg(&x, &x.scaled(0.9), &cfg).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "{v}");
        let v = fw_snr_seg(&x, &x.scaled(1.5), &cfg).unwrap();
        assert!((v - 6.020599913279624).abs() < 1e-9, "{v}");
        assert_eq!(fw_snr_seg(&x, &x.scaled(0.999), &cfg).unwrap(), 35.0);
        assert!(fw_snr_seg(&x, &x.scaled(2.0), &cfg).unwrap().abs() < 1e-9);
        assert!((fw_snr_seg(&x, &x.scaled(20.0), &cfg).unwrap() + 10.0).abs() < 1e-9);
    }

    #[test]
    fn two_frame_band_sums_match_direct_oracle() {
        let cfg = MetricFrameConfig::default();
        let x = two_frame_signal();
        let noise: Vec<f64> = (0..768).map(|n| 0.2 * ((n * 7919 % 257) as f64 / 257.0 - 0.5)).collect();
        let y = AudioSignal::new(x.samples.iter().zip(&noise).map(|(a, b)| a + b).collect(), 16000).unwrap();
        let got = fw_snr_seg_frames(&x, &y, &cfg).unwrap();

        let fb = MelFilterbank::new(512, 25, 16000).unwrap();
        let w: Vec<f64> = (1..=512).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / 513.0).cos()).collect();
        let bands = |s: &[f64], start: usize| -> Vec<f64> {
            let mag: Vec<f64> = (0..=256)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for n in 0..512 {
                        let a = -2.0 * PI * (k * n) as f64 / 512.0;
                        re += s[start + n] * w[n] * a.cos();
                        im += s[start + n] * w[n] * a.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect();
            (0..25).map(|m| (0..=256).map(|k| fb.weight(m, k) * mag[k]).sum()).collect()
        };
        for (f, g) in got.iter().enumerate() {
            let bx = bands(&x.samples, f * 256);
            let by = bands(&y.samples, f * 256);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..25 {
                let wj = bx[j].powf(0.2);
                let snr = (10.0 * (bx[j].powi(2) / (bx[j] - by[j]).powi(2)).log10()).clamp(-10.0, 35.0);
                num += wj * snr;
                den += wj;
            }
            let expect = (num / den).clamp(-10.0, 35.0);
            assert!((g - expect).abs() < 1e-8, "frame {f}: {g} vs {expect}");
        }
    }

    #[test]
    fn silent_clean_frames_are_skipped() {
        let cfg = MetricFrameConfig::default();
        let mut s = vec![0.0; 1024];
        s.extend(two_frame_signal().samples);
        let x = AudioSignal::new(s, 16000).unwrap();
        let f = fw_snr_seg_frames(&x, &x.scaled(0.5), &cfg).unwrap();
        // Six frames; the first three cover only the leading zeros.
        assert_eq!(f.len(), 3);
        let z = AudioSignal::zeros(2000, 16000);
        assert!(matches!(fw_snr_seg(&z, &x, &cfg), Err(Error::Degenerate(_))));
    }

    #[test]
    fn noise_scores_below_light_noise() {
        let cfg = MetricFrameConfig::default();
        let x = SpeechLike::default().generate(8);
        let light = crate::signal::add_noise_at_snr(&x, 30.0, 1).unwrap();
        let heavy = crate::signal::add_noise_at_snr(&x, 0.0, 1).unwrap();
        let noise = AudioSignal::new(
            heavy.samples.iter().zip(&x.samples).map(|(a, b)| a - b).collect(),
            16000,
        )
        .unwrap();
        let a = fw_snr_seg(&x, &light, &cfg).unwrap();
        let b = fw_snr_seg(&x, &noise, &cfg).unwrap();
        assert!(b < a, "{b} vs {a}");
    }
}
