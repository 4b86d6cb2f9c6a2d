//! Cached (reverberant, clean) log-Mel image pairs at the network input size.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::dataset::{DatasetManifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::features::{logmel_of, read_meli, resize_time, write_meli, MelFilterbank, MelImage, N_FFT, N_MELS, TARGET_FRAMES};
use crate::wav;

pub const INDEX_FILE: &str = "index.csv";
pub const INDEX_HEADER: &str = "utterance_id,source,split,t60,snr_db,frames,hash,input,target";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub utterance_id: String,
    /// Stem of the clean source file; validation splits are drawn by source.
    pub source: String,
    pub split: Split,
    pub t60: f64,
    pub snr_db: f64,
    /// STFT frame count before resizing.
    pub frames: usize,
    /// SHA-256 of the reverberant and clean WAV bytes.
    pub hash: String,
    pub input: PathBuf,
    pub target: PathBuf,
}

impl FeatureEntry {
    pub fn load(&self) -> Result<(MelImage, MelImage)> {
        Ok((read_meli(&self.input)?, read_meli(&self.target)?))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureCache {
    pub entries: Vec<FeatureEntry>,
    /// Entries computed by the call that produced this value; 0 on a no-op rerun.
    pub computed: usize,
}

impl FeatureCache {
    pub fn index_csv(&self) -> String {
        let mut s = String::from(INDEX_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.utterance_id,
                e.source,
                e.split,
                e.t60,
                e.snr_db,
                e.frames,
                e.hash,
                e.input.display(),
                e.target.display()
            ));
        }
        s
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(INDEX_FILE);
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(INDEX_HEADER) {
            return Err(Error::format(&path, "missing feature index header"));
        }
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 9 {
                    return Err(Error::format(&path, format!("expected 9 fields: {l}")));
                }
                let bad = |s: &str| Error::format(&path, format!("bad number {s:?}"));
                Ok(FeatureEntry {
                    utterance_id: f[0].into(),
                    source: f[1].into(),
                    split: Split::parse(f[2])?,
                    t60: f[3].parse().map_err(|_| bad(f[3]))?,
                    snr_db: f[4].parse().map_err(|_| bad(f[4]))?,
                    frames: f[5].parse().map_err(|_| bad(f[5]))?,
                    hash: f[6].into(),
                    input: f[7].into(),
                    target: f[8].into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, computed: 0 })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn content_hash(row: &ManifestRow) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(&row.reverb)?);
    h.update(fs::read(&row.clean)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn source_of(row: &ManifestRow) -> String {
    row.clean
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("source")
        .to_string()
}

/// Extracts features for every manifest row into `dir`. Rows whose WAV content
/// hash matches the existing index and whose image files exist are skipped.
pub fn make_features(manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<FeatureCache> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let previous: HashMap<String, FeatureEntry> = FeatureCache::load(dir)
        .map(|c| c.entries.into_iter().map(|e| (e.utterance_id.clone(), e)).collect())
        .unwrap_or_default();
    let fb = MelFilterbank::new(N_FFT, N_MELS, crate::signal::DEFAULT_SAMPLE_RATE)?;

    let results = manifest
        .rows
        .par_iter()
        .map(|row| -> Result<(FeatureEntry, bool)> {
            let hash = content_hash(row)?;
            if let Some(old) = previous.get(&row.utterance_id) {
                if old.hash == hash && old.input.exists() && old.target.exists() {
                    let mut e = old.clone();
                    // Provenance follows the current manifest.
                    e.split = row.split;
                    e.t60 = row.t60;
                    e.snr_db = row.snr_db;
                    e.source = source_of(row);
                    return Ok((e, false));
                }
            }
            let noisy = wav::read(&row.reverb)?;
            let clean = wav::read(&row.clean)?;
            let (spec, input) = logmel_of(&noisy, &fb)?;
            let (_, target) = logmel_of(&clean, &fb)?;
            let input_path = dir.join(format!("{}.in.meli", row.utterance_id));
            let target_path = dir.join(format!("{}.tgt.meli", row.utterance_id));
            write_meli(&input_path, &resize_time(&input, TARGET_FRAMES)?)?;
            write_meli(&target_path, &resize_time(&target, TARGET_FRAMES)?)?;
            Ok((
                FeatureEntry {
                    utterance_id: row.utterance_id.clone(),
                    source: source_of(row),
                    split: row.split,
                    t60: row.t60,
                    snr_db: row.snr_db,
                    frames: spec.n_frames,
                    hash,
                    input: input_path,
                    target: target_path,
                },
                true,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let computed = results.iter().filter(|(_, fresh)| *fresh).count();
    let cache = FeatureCache {
        entries: results.into_iter().map(|(e, _)| e).collect(),
        computed,
    };
    let index = cache.index_csv();
    let index_path = dir.join(INDEX_FILE);
    if fs::read_to_string(&index_path).ok().as_deref() != Some(index.as_str()) {
        fs::write(&index_path, index)?;
    }
    log::info!("features: {computed} computed, {} reused", cache.entries.len() - computed);
    Ok(cache)
}
