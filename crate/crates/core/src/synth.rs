//! Speech-like test signals: syllables of formant-filtered glottal pulses (or white
//! noise) separated by short pauses, at roughly a 4 Hz syllable rate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::AudioSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excitation {
    /// Pulse train with a drifting fundamental.
    Voiced,
    /// White noise (whispered speech).
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechLike {
    pub duration: f64,
    pub sample_rate: u32,
    pub excitation: Excitation,
    /// Target RMS over the whole utterance.
    pub rms: f64,
}

impl Default for SpeechLike {
    fn default() -> Self {
        Self {
            duration: 3.0,
            sample_rate: 16_000,
            excitation: Excitation::Voiced,
            rms: 0.05,
        }
    }
}

/// Two-pole resonator at `freq` with bandwidth `bw`, normalized to unit gain at `freq`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, fs: f64) -> Self {
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        // |1 - a1 e^{-jw} - a2 e^{-2jw}| at w = theta.
        let re = 1.0 - a1 * theta.cos() - a2 * (2.0 * theta).cos();
        let im = a1 * theta.sin() + a2 * (2.0 * theta).sin();
        Self {
            a1,
            a2,
            gain: (re * re + im * im).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

impl SpeechLike {
    pub fn generate(&self, seed: u64) -> AudioSignal {
        let fs = self.sample_rate as f64;
        let n = (self.duration * fs).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; n];
        let base_f0: f64 = rng.random_range(95.0..210.0);

        let mut pos = (rng.random_range(0.05..0.15) * fs) as usize;
        while pos < n {
            let syl_len = (rng.random_range(0.12..0.28) * fs) as usize;
            let gap = (rng.random_range(0.04..0.12) * fs) as usize;
            let end = (pos + syl_len).min(n);
            let f1 = rng.random_range(300.0..850.0);
            let f2 = rng.random_range(900.0..2400.0);
            let f3 = rng.random_range(2500.0..3500.0);
            let mut formants = [
                Resonator::new(f1, 80.0, fs),
                Resonator::new(f2, 120.0, fs),
                Resonator::new(f3, 200.0, fs),
            ];
            let weights = [1.0, 0.6, 0.3];
            let f0_start = base_f0 * rng.random_range(0.85..1.15);
            let f0_end = base_f0 * rng.random_range(0.85..1.15);
            let level = rng.random_range(0.5..1.0);
            let mut phase = 0.0;
            for (i, slot) in out[pos..end].iter_mut().enumerate() {
                let frac = i as f64 / syl_len as f64;
                let excitation = match self.excitation {
                    Excitation::Voiced => {
                        phase += (f0_start + (f0_end - f0_start) * frac) / fs;
                        let pulse = if phase >= 1.0 {
                            phase -= 1.0;
                            1.0
                        } else {
                            0.0
                        };
                        pulse + 0.02 * rng.random_range(-1.0..1.0)
                    }
                    Excitation::Noise => rng.random_range(-1.0..1.0),
                };
                let mut y = 0.0;
                for (r, w) in formants.iter_mut().zip(weights) {
                    y += w * r.tick(excitation);
                }
                // Raised-cosine syllable envelope.
                let env = (PI * frac).sin().powf(0.7);
                *slot = level * env * y;
            }
            pos = end + gap;
        }

        let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
        if rms > 0.0 {
            let g = self.rms / rms;
            out.iter_mut().for_each(|v| *v *= g);
        }
        AudioSignal {
            samples: out,
            sample_rate: self.sample_rate,
        }
    }
}
