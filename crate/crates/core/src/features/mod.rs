//! Spectrogram front end: STFT, log-power Mel images, Lanczos time resizing and the
//! inverse path back to a waveform.

mod image;
mod mel;
mod resize;
mod stft;

pub use image::{read_meli, write_meli, MelImage, DB_MAX, DB_MIN, MELI_VERSION};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use resize::{lanczos3, resize_back, resize_time};
pub use stft::{istft, stft, Spectrogram};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::AudioSignal;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_MELS: usize = 128;
pub const TARGET_FRAMES: usize = 340;

/// Power floor added before taking logs.
pub const LOG_EPS: f64 = 1e-10;

/// Multiplicative-update iterations used when inverting the Mel projection.
const NNLS_ITERS: usize = 200;

/// `10 log10(mel . |X|^2 + eps)` clamped to the image range.
pub fn to_logmel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelImage> {
    if fb.n_bins() != spec.bins() {
        return Err(Error::Shape(format!(
            "filterbank has {} bins, spectrogram {}",
            fb.n_bins(),
            spec.bins()
        )));
    }
    let frames = spec.n_frames;
    let mut values = vec![0.0; fb.n_mels() * frames];
    let mut power = vec![0.0; spec.bins()];
    let mut mel = vec![0.0; fb.n_mels()];
    for t in 0..frames {
        for (p, x) in power.iter_mut().zip(spec.frame(t)) {
            *p = x.norm_sqr();
        }
        fb.apply(&power, &mut mel);
        for (m, &e) in mel.iter().enumerate() {
            values[m * frames + t] = power_to_db(e);
        }
    }
    MelImage::new(fb.n_mels(), frames, values)
}

pub fn power_to_db(p: f64) -> f64 {
    (10.0 * (p + LOG_EPS).log10()).clamp(DB_MIN, DB_MAX)
}

pub fn db_to_power(db: f64) -> f64 {
    (10f64.powf(db / 10.0) - LOG_EPS).max(0.0)
}

/// STFT followed by the log-Mel projection with default parameters.
pub fn logmel_of(x: &AudioSignal, fb: &MelFilterbank) -> Result<(Spectrogram, MelImage)> {
    let spec = stft(x)?;
    let img = to_logmel(&spec, fb)?;
    Ok((spec, img))
}

/// Rebuilds a waveform from a log-Mel image using the phases of `phase_source`.
///
/// Linear power per frame is recovered by non-negative least squares against the
/// filterbank, and the square-root magnitude is paired with the observed phase.
pub fn invert_logmel(
    img: &MelImage,
    phase_source: &Spectrogram,
    fb: &MelFilterbank,
) -> Result<AudioSignal> {
    if img.frames != phase_source.n_frames {
        return Err(Error::Shape(format!(
            "image has {} frames, phase source {}; resize back first",
            img.frames, phase_source.n_frames
        )));
    }
    if img.n_mels != fb.n_mels() || fb.n_bins() != phase_source.bins() {
        return Err(Error::Shape("filterbank does not match image/spectrogram".into()));
    }
    let mut out = phase_source.clone();
    let mut target = vec![0.0; img.n_mels];
    for t in 0..img.frames {
        for (m, v) in target.iter_mut().enumerate() {
            *v = db_to_power(img.get(m, t));
        }
        let power = fb.nnls(&target, NNLS_ITERS);
        for (x, p) in out.frame_mut(t).iter_mut().zip(&power) {
            let mag = p.sqrt();
            let norm = x.norm();
            *x = if norm > 0.0 {
                *x * (mag / norm)
            } else {
                Complex64::new(mag, 0.0)
            };
        }
    }
    istft(&out)
}
