use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DB_MIN: f64 = -80.0;
pub const DB_MAX: f64 = 30.0;

const MELI_MAGIC: &[u8; 4] = b"MELI";
pub const MELI_VERSION: u32 = 1;

/// Log-power Mel image in dB, row-major `n_mels x frames`, always within
/// `[DB_MIN, DB_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelImage {
    pub n_mels: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl MelImage {
    pub fn new(n_mels: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if n_mels == 0 || frames == 0 {
            return Err(Error::Shape("Mel image needs at least one row and frame".into()));
        }
        if values.len() != n_mels * frames {
            return Err(Error::Shape(format!(
                "{} values for a {n_mels}x{frames} image",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(DB_MIN..=DB_MAX).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "value {v} outside [{DB_MIN}, {DB_MAX}] dB"
            )));
        }
        Ok(Self {
            n_mels,
            frames,
            values,
        })
    }

    /// Like [`MelImage::new`] but clamps instead of rejecting; NaN maps to the floor.
    pub fn clamped(n_mels: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { DB_MIN } else { v.clamp(DB_MIN, DB_MAX) })
            .collect();
        Self::new(n_mels, frames, values)
    }

    pub fn filled(n_mels: usize, frames: usize, db: f64) -> Self {
        Self {
            n_mels,
            frames,
            values: vec![db.clamp(DB_MIN, DB_MAX); n_mels * frames],
        }
    }

    pub fn get(&self, m: usize, t: usize) -> f64 {
        self.values[m * self.frames + t]
    }

    /// Affine map of `[DB_MIN, DB_MAX]` onto `[-1, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|&v| normalize_db(v)).collect()
    }

    /// Inverse of [`MelImage::normalized`], clamping into range.
    pub fn from_normalized(n_mels: usize, frames: usize, values: &[f64]) -> Result<Self> {
        Self::clamped(
            n_mels,
            frames,
            values.iter().map(|&v| denormalize_db(v)).collect(),
        )
    }
}

pub fn normalize_db(db: f64) -> f64 {
    2.0 * (db - DB_MIN) / (DB_MAX - DB_MIN) - 1.0
}

pub fn denormalize_db(v: f64) -> f64 {
    (v + 1.0) * 0.5 * (DB_MAX - DB_MIN) + DB_MIN
}

/// Writes `MELI | u32 version | u32 n_mels | u32 frames | f32 values` (little endian).
pub fn write_meli(path: impl AsRef<Path>, img: &MelImage) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * img.values.len());
    buf.extend_from_slice(MELI_MAGIC);
    buf.extend_from_slice(&MELI_VERSION.to_le_bytes());
    buf.extend_from_slice(&(img.n_mels as u32).to_le_bytes());
    buf.extend_from_slice(&(img.frames as u32).to_le_bytes());
    for &v in &img.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_meli(path: impl AsRef<Path>) -> Result<MelImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MELI_MAGIC {
        return Err(Error::format(path, "missing MELI header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MELI_VERSION {
        return Err(Error::format(path, format!("unsupported MELI version {version}")));
    }
    let (n_mels, frames) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 4 * n_mels * frames;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MelImage::clamped(n_mels, frames, values)
}
