//! Experiment configuration: flat `key = value` files with `#` comments, where
//! later assignments (including command-line overrides) win.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nnet::{UNetConfig, DEFAULT_LR};

#[derive(Debug, Clone, PartialEq)]
pub enum RirSource {
    /// Image-method RIRs in the evaluation room, one per grid T60.
    Generated,
    /// Measured or pre-computed RIR WAVs from a directory.
    Dir(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrSpec {
    Fixed(f64),
    /// Drawn uniformly per row from `[lo, hi]` dB.
    Uniform(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Unet,
    LsUnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Unet => "unet",
            ModelKind::LsUnet => "ls-unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unet" | "u-net" => Ok(ModelKind::Unet),
            "ls-unet" | "ls_unet" | "lsunet" => Ok(ModelKind::LsUnet),
            other => Err(Error::Config(format!("unknown model {other:?} (expected unet or ls-unet)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus_dir: PathBuf,
    /// When positive and the corpus directory holds no WAVs, this many speech-like
    /// utterances are synthesized into it first.
    pub synthetic_utterances: usize,
    pub out_dir: PathBuf,
    pub rir_source: RirSource,
    pub t60_grid: Vec<f64>,
    pub snr: SnrSpec,
    pub utterances_per_condition: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub depth: usize,
    pub base_channels: usize,
    /// Share of source utterances held out for testing.
    pub test_fraction: f64,
    /// Share of the training sources used for validation.
    pub val_fraction: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    /// Methods for `eval`, in report order.
    pub methods: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            synthetic_utterances: 0,
            out_dir: PathBuf::from("out"),
            rir_source: RirSource::Generated,
            t60_grid: vec![0.3, 0.6, 0.9],
            snr: SnrSpec::Uniform(15.0, 35.0),
            utterances_per_condition: 5,
            seed: 0,
            model: ModelKind::LsUnet,
            epochs: 30,
            batch_size: 16,
            lr: DEFAULT_LR,
            depth: 4,
            base_channels: 16,
            test_fraction: 0.2,
            val_fraction: 0.1,
            jobs: 0,
            methods: vec!["reverberant".into(), "fd-ndlp".into()],
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: {v:?} is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: {v:?} is not a non-negative integer")))
}

fn parse_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// `a:b:step` inclusive ranges or comma lists.
fn parse_grid(key: &str, v: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let (a, b, s) = (parse_f64(key, parts[0])?, parse_f64(key, parts[1])?, parse_f64(key, parts[2])?);
        if !(s > 0.0) || b < a {
            return Err(Error::Config(format!("{key}: bad range {v:?}")));
        }
        let n = ((b - a) / s + 1e-9).floor() as usize;
        // Rounded to suppress accumulation noise such as 0.30000000000000004.
        return Ok((0..=n).map(|i| ((a + i as f64 * s) * 1e9).round() / 1e9).collect());
    }
    parse_list(v).into_iter().map(|x| parse_f64(key, x)).collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "corpus_dir" => self.corpus_dir = PathBuf::from(v),
            "synthetic_utterances" => self.synthetic_utterances = parse_usize(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "rir_source" => {
                self.rir_source = match v {
                    "generated" => RirSource::Generated,
                    _ => match v.strip_prefix("dir:") {
                        Some(p) => RirSource::Dir(PathBuf::from(p.trim())),
                        None => {
                            return Err(Error::Config(format!(
                                "rir_source: expected `generated` or `dir:<path>`, got {v:?}"
                            )))
                        }
                    },
                }
            }
            "t60_grid" => self.t60_grid = parse_grid(key, v)?,
            "snr" => {
                self.snr = match v.split_once("..") {
                    Some((a, b)) => SnrSpec::Uniform(parse_f64(key, a)?, parse_f64(key, b)?),
                    None => SnrSpec::Fixed(parse_f64(key, v)?),
                }
            }
            "utterances_per_condition" => self.utterances_per_condition = parse_usize(key, v)?,
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: {v:?} is not an unsigned integer")))?
            }
            "model" => self.model = ModelKind::parse(v)?,
            "epochs" => self.epochs = parse_usize(key, v)?,
            "batch_size" => self.batch_size = parse_usize(key, v)?,
            "lr" => self.lr = parse_f64(key, v)?,
            "depth" => self.depth = parse_usize(key, v)?,
            "base_channels" => self.base_channels = parse_usize(key, v)?,
            "test_fraction" => self.test_fraction = parse_f64(key, v)?,
            "val_fraction" => self.val_fraction = parse_f64(key, v)?,
            "jobs" => self.jobs = parse_usize(key, v)?,
            "methods" => self.methods = parse_list(v).into_iter().map(String::from).collect(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides, e.g. from repeated `--set` flags.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.t60_grid.is_empty() && self.rir_source == RirSource::Generated {
            return Err(Error::Config("t60_grid is empty".into()));
        }
        if self.t60_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("t60 values must be positive".into()));
        }
        if self.utterances_per_condition == 0 {
            return Err(Error::Config("utterances_per_condition must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let SnrSpec::Uniform(a, b) = self.snr {
            if !(a <= b) {
                return Err(Error::Config(format!("snr range {a}..{b} is empty")));
            }
        }
        for (name, f) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.unet_config(self.model).validate()
    }

    pub fn unet_config(&self, model: ModelKind) -> UNetConfig {
        UNetConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            ls_skip: model == ModelKind::LsUnet,
            ..UNetConfig::default()
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.csv")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.out_dir.join("features")
    }

    pub fn train_dir(&self, model: ModelKind) -> PathBuf {
        self.out_dir.join("train").join(model.name())
    }

    /// Best-validation checkpoint written by training.
    pub fn checkpoint_path(&self, model: ModelKind) -> PathBuf {
        self.train_dir(model).join("best.lsun")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }
}
