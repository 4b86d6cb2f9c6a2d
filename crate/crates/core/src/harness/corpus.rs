use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::{AudioSignal, DEFAULT_SAMPLE_RATE};
use crate::synth::SpeechLike;
use crate::wav::{self, WavEncoding};

/// A validated clean utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// File stem.
    pub id: String,
    pub path: PathBuf,
    pub signal: AudioSignal,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every 16 kHz mono WAV in `dir` in lexicographic order; other files are
/// reported and skipped.
pub fn ingest_corpus(dir: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Config(format!("corpus directory {} does not exist", dir.display())));
    }
    let mut out = Vec::new();
    for path in wav_files(dir)? {
        match wav::read(&path) {
            Ok(sig) if sig.sample_rate == DEFAULT_SAMPLE_RATE && !sig.is_empty() => {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("utterance")
                    .to_string();
                out.push(Utterance { id, path, signal: sig });
            }
            Ok(sig) if sig.is_empty() => log::warn!("skipping {}: no samples", path.display()),
            Ok(sig) => log::warn!(
                "skipping {}: {} Hz (only {} Hz is supported)",
                path.display(),
                sig.sample_rate,
                DEFAULT_SAMPLE_RATE
            ),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "corpus directory {} holds no usable 16 kHz mono WAV files",
            dir.display()
        )));
    }
    Ok(out)
}

/// Writes `n` speech-like utterances (`synth_000.wav`, ...) into `dir` unless it
/// already contains WAV files. Returns the number written.
pub fn ensure_synthetic_corpus(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<usize> {
    let dir = dir.as_ref();
    if n == 0 {
        return Ok(0);
    }
    fs::create_dir_all(dir)?;
    if !wav_files(dir)?.is_empty() {
        return Ok(0);
    }
    let gen = SpeechLike::default();
    for i in 0..n {
        let x = gen.generate(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        wav::write(dir.join(format!("synth_{i:03}.wav")), &x, WavEncoding::Float32)?;
    }
    log::info!("wrote {n} synthetic utterances to {}", dir.display());
    Ok(n)
}
