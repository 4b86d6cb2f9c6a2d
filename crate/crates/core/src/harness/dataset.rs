//! Reverberant dataset synthesis and the manifest CSV.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, RirSource, SnrSpec};
use super::corpus::{ensure_synthetic_corpus, ingest_corpus, Utterance};
use crate::error::{Error, Result};
use crate::rir::{image_source_rir, load_rir, measure_t60, save_rir, sidecar_path, IsmOptions, RirMetadata, RoomSpec};
use crate::signal::{add_noise_at_snr, convolve, Rir};
use crate::wav::{self, WavEncoding};

pub const MANIFEST_HEADER: &str = "utterance_id,clean,reverb,rir,t60,snr_db,split";

/// Training source positions keep this distance from the walls, from the
/// microphone and from the held-out evaluation source position.
const POSITION_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub clean: PathBuf,
    pub reverb: PathBuf,
    pub rir: PathBuf,
    pub t60: f64,
    pub snr_db: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.utterance_id,
                r.clean.display(),
                r.reverb.display(),
                r.rir.display(),
                r.t60,
                r.snr_db,
                r.split
            ));
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(Error::format(path, "missing manifest header"));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 7 {
                    return Err(Error::format(path, format!("expected 7 fields: {l}")));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(path, format!("bad number {s:?}")));
                Ok(ManifestRow {
                    utterance_id: f[0].to_string(),
                    clean: PathBuf::from(f[1]),
                    reverb: PathBuf::from(f[2]),
                    rir: PathBuf::from(f[3]),
                    t60: num(f[4])?,
                    snr_db: num(f[5])?,
                    split: Split::parse(f[6])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

/// First eight bytes of SHA-256 over `seed:utterance:t60`.
pub fn row_seed(seed: u64, utterance_id: &str, t60: f64) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{utterance_id}:{t60}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Random source position for training rooms, away from walls, the microphone
/// and the evaluation source.
fn training_source<R: Rng>(rng: &mut R, eval: &RoomSpec) -> [f64; 3] {
    loop {
        let mut p = [0.0; 3];
        for (a, v) in p.iter_mut().enumerate() {
            *v = rng.random_range(POSITION_MARGIN..eval.dims[a] - POSITION_MARGIN);
        }
        let far = |q: [f64; 3]| {
            p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= POSITION_MARGIN
        };
        if far(eval.src_pos) && far(eval.mic_pos) {
            return p;
        }
    }
}

struct Condition {
    t60: f64,
    /// A fixed external RIR, when not generating.
    rir: Option<(PathBuf, Rir)>,
}

fn conditions(cfg: &ExperimentConfig) -> Result<Vec<Condition>> {
    match &cfg.rir_source {
        RirSource::Generated => Ok(cfg.t60_grid.iter().map(|&t60| Condition { t60, rir: None }).collect()),
        RirSource::Dir(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("wav"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!("no RIR WAVs in {}", dir.display())));
            }
            files
                .into_iter()
                .map(|p| {
                    let h = load_rir(&p)?;
                    let t60 = sidecar_t60(&p).map_or_else(|| measure_t60(&h), Ok)?;
                    Ok(Condition { t60, rir: Some((p, h)) })
                })
                .collect()
        }
    }
}

fn sidecar_t60(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(sidecar_path(path)).ok()?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "t60")
        .and_then(|(_, v)| v.trim().parse().ok())
}

/// Number of distinct sources used and how many of them (the last ones) are held out.
pub(crate) fn source_split(n_sources: usize, test_fraction: f64) -> usize {
    if test_fraction <= 0.0 || n_sources < 2 {
        return 0;
    }
    ((n_sources as f64 * test_fraction).ceil() as usize).clamp(1, n_sources - 1)
}

struct RowPlan<'a> {
    id: String,
    source: &'a Utterance,
    cond: &'a Condition,
    split: Split,
}

/// Builds reverberant copies of the corpus for every condition and writes the
/// manifest next to them.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    ensure_synthetic_corpus(&cfg.corpus_dir, cfg.synthetic_utterances, cfg.seed)?;
    let corpus = ingest_corpus(&cfg.corpus_dir)?;
    let conds = conditions(cfg)?;
    let n_used = cfg.utterances_per_condition.min(corpus.len());
    let n_test = source_split(n_used, cfg.test_fraction);
    if cfg.utterances_per_condition > corpus.len() {
        log::warn!(
            "{} utterances per condition but only {} sources; sources are reused",
            cfg.utterances_per_condition,
            corpus.len()
        );
    }

    let mut plans = Vec::new();
    for cond in &conds {
        for j in 0..cfg.utterances_per_condition {
            let src = j % n_used;
            let source = &corpus[src];
            plans.push(RowPlan {
                id: format!("{j:03}_{}_t{:04}", source.id, (cond.t60 * 1000.0).round() as i64),
                source,
                cond,
                split: if src >= n_used - n_test { Split::Test } else { Split::Train },
            });
        }
    }

    let data = cfg.data_dir();
    fs::create_dir_all(data.join("reverb"))?;
    fs::create_dir_all(data.join("rir"))?;
    let rows = plans
        .par_iter()
        .map(|p| make_row(cfg, p, &data))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { rows };
    fs::create_dir_all(&cfg.out_dir)?;
    manifest.write(cfg.manifest_path())?;
    Ok(manifest)
}

fn make_row(cfg: &ExperimentConfig, p: &RowPlan, data: &Path) -> Result<ManifestRow> {
    let seed = row_seed(cfg.seed, &p.id, p.cond.t60);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rir_path, h) = match &p.cond.rir {
        Some((path, h)) => (path.clone(), h.clone()),
        None => {
            let mut room = RoomSpec::evaluation_room(p.cond.t60);
            if p.split == Split::Train {
                room.src_pos = training_source(&mut rng, &room);
            }
            let h = image_source_rir(&room, &IsmOptions::default())?.normalized_to_direct();
            let path = data.join("rir").join(format!("{}.wav", p.id));
            let beta = crate::rir::beta_from_t60(&room)?;
            save_rir(
                &path,
                &h,
                &RirMetadata {
                    room,
                    beta,
                    direct_path_index: h.direct_path_index,
                },
            )?;
            (path, h)
        }
    };
    let snr_db = match cfg.snr {
        SnrSpec::Fixed(v) => v,
        SnrSpec::Uniform(a, b) if a == b => a,
        SnrSpec::Uniform(a, b) => rng.random_range(a..=b),
    };
    let clean = &p.source.signal;
    let y = convolve(clean, &h)?.fit_to(clean.len());
    let y = add_noise_at_snr(&y, snr_db, seed)?;
    let reverb = data.join("reverb").join(format!("{}.wav", p.id));
    wav::write(&reverb, &y, WavEncoding::Float32)?;
    Ok(ManifestRow {
        utterance_id: p.id.clone(),
        clean: p.source.path.clone(),
        reverb,
        rir: rir_path,
        t60: p.cond.t60,
        snr_db,
        split: p.split,
    })
}
