use std::f64::consts::PI;

use super::image::MelImage;
use crate::error::{Error, Result};

const LOBES: f64 = 3.0;

/// Lanczos-3 kernel.
pub fn lanczos3(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if t.abs() >= LOBES || t.fract() == 0.0 {
        0.0
    } else {
        let a = PI * t;
        LOBES * a.sin() * (a / LOBES).sin() / (a * a)
    }
}

/// Per-output (source index, weight) taps using pixel-center alignment and
/// replicated borders.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let x = (j as f64 + 0.5) * scale - 0.5;
            let base = x.floor() as isize;
            let mut taps = Vec::with_capacity(6);
            let mut total = 0.0;
            for i in base - 2..=base + 3 {
                let w = lanczos3(x - i as f64);
                if w != 0.0 {
                    let src = i.clamp(0, n_in as isize - 1) as usize;
                    taps.push((src, w));
                    total += w;
                }
            }
            for t in taps.iter_mut() {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples the time axis to `target_frames` with a Lanczos-3 kernel; the
/// frequency axis is untouched and the result is re-clamped to the image range.
pub fn resize_time(img: &MelImage, target_frames: usize) -> Result<MelImage> {
    if target_frames == 0 {
        return Err(Error::InvalidArgument("target frame count must be >= 1".into()));
    }
    if target_frames == img.frames {
        return Ok(img.clone());
    }
    let taps = resample_taps(img.frames, target_frames);
    let mut values = vec![0.0; img.n_mels * target_frames];
    for m in 0..img.n_mels {
        let row = &img.values[m * img.frames..(m + 1) * img.frames];
        let out = &mut values[m * target_frames..(m + 1) * target_frames];
        for (o, tap) in out.iter_mut().zip(&taps) {
            *o = tap.iter().map(|&(i, w)| row[i] * w).sum::<f64>();
        }
    }
    MelImage::clamped(img.n_mels, target_frames, values)
}

/// Undoes [`resize_time`], returning to the original frame count.
pub fn resize_back(img: &MelImage, original_frames: usize) -> Result<MelImage> {
    resize_time(img, original_frames)
}
