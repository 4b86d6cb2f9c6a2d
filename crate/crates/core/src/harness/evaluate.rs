//! Test-split scoring of every method plus grouped means.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::dataset::{DatasetManifest, ManifestRow, Split};
use super::dereverb::{Dereverberator, Method};
use crate::error::{Error, Result};
use crate::metrics::{write_eval_csv, EvalRecord, MetricFrameConfig};
use crate::wav;

pub const AGGREGATE_HEADER_T60: &str = "method,t60,count,cd,llr,fwsnrseg,srmr";
pub const AGGREGATE_HEADER_SNR: &str = "method,snr_db,count,cd,llr,fwsnrseg,srmr";

/// Means over one (method, condition) group. Missing scores are left out of
/// the mean; a column with no scores at all stays `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub key: f64,
    pub count: usize,
    pub cd: Option<f64>,
    pub llr: Option<f64>,
    pub fwsnrseg: Option<f64>,
    pub srmr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    T60,
    /// Rounded to whole dB so drawn SNRs collapse onto readable groups.
    Snr,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Groups keep the order in which methods first appear, then ascending keys.
pub fn aggregate(records: &[EvalRecord], by: GroupBy) -> Vec<AggregateRow> {
    let key = |r: &EvalRecord| match by {
        GroupBy::T60 => r.t60,
        GroupBy::Snr => r.snr_db.round(),
    };
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
        let mut keys: Vec<f64> = rows.iter().map(|r| key(r)).collect();
        keys.sort_by(f64::total_cmp);
        keys.dedup();
        for k in keys {
            let g: Vec<&&EvalRecord> = rows.iter().filter(|r| key(r) == k).collect();
            out.push(AggregateRow {
                method: m.to_string(),
                key: k,
                count: g.len(),
                cd: mean(g.iter().map(|r| r.cd)),
                llr: mean(g.iter().map(|r| r.llr)),
                fwsnrseg: mean(g.iter().map(|r| r.fwsnrseg)),
                srmr: mean(g.iter().map(|r| r.srmr)),
            });
        }
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow], by: GroupBy) -> String {
    let mut s = String::from(match by {
        GroupBy::T60 => AGGREGATE_HEADER_T60,
        GroupBy::Snr => AGGREGATE_HEADER_SNR,
    });
    s.push('\n');
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.key,
            r.count,
            cell(r.cd),
            cell(r.llr),
            cell(r.fwsnrseg),
            cell(r.srmr)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub records: Vec<EvalRecord>,
    pub by_t60: Vec<AggregateRow>,
    pub by_snr: Vec<AggregateRow>,
    pub records_path: PathBuf,
}

fn score(row: &ManifestRow, d: &mut Dereverberator, frame: &MetricFrameConfig) -> Result<EvalRecord> {
    let clean = wav::read(&row.clean)?;
    let noisy = wav::read(&row.reverb)?;
    let name = d.method().name();
    let blank = || EvalRecord {
        utterance_id: row.utterance_id.clone(),
        method: name.to_string(),
        t60: row.t60,
        snr_db: row.snr_db,
        cd: None,
        llr: None,
        fwsnrseg: None,
        srmr: None,
    };
    let out = match d.process(&noisy) {
        Ok(y) => y,
        Err(e) => {
            log::warn!("{}/{name}: processing failed: {e}", row.utterance_id);
            return Ok(blank());
        }
    };
    Ok(
        EvalRecord::compute(&row.utterance_id, name, row.t60, row.snr_db, &clean, &out, frame).unwrap_or_else(|e| {
            log::warn!("{}/{name}: scoring failed: {e}", row.utterance_id);
            blank()
        }),
    )
}

/// Scores the configured methods on the test split and writes `records.csv`,
/// `by_t60.csv` and `by_snr.csv` into the evaluation directory.
pub fn evaluate(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<EvalOutcome> {
    let methods = cfg.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
    evaluate_methods(cfg, manifest, &methods)
}

pub fn evaluate_methods(cfg: &ExperimentConfig, manifest: &DatasetManifest, methods: &[Method]) -> Result<EvalOutcome> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let rows: Vec<&ManifestRow> = manifest.split(Split::Test).collect();
    if rows.is_empty() {
        return Err(Error::Config("manifest has no test rows".into()));
    }
    let frame = MetricFrameConfig::default();
    let mut records = Vec::with_capacity(rows.len() * methods.len());
    for &m in methods {
        let ckpt = match m {
            Method::Neural(kind) => Some(cfg.checkpoint_path(kind)),
            _ => None,
        };
        let d = Dereverberator::new(m, ckpt.as_deref())?;
        let scored = rows
            .par_iter()
            .map_init(|| d.clone(), |d, row| score(row, d, &frame))
            .collect::<Result<Vec<_>>>()?;
        records.extend(scored);
    }

    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    let records_path = dir.join("records.csv");
    let mut buf = Vec::new();
    write_eval_csv(&mut buf, &records)?;
    fs::write(&records_path, buf)?;
    let by_t60 = aggregate(&records, GroupBy::T60);
    let by_snr = aggregate(&records, GroupBy::Snr);
    fs::write(dir.join("by_t60.csv"), aggregate_csv(&by_t60, GroupBy::T60))?;
    fs::write(dir.join("by_snr.csv"), aggregate_csv(&by_snr, GroupBy::Snr))?;
    Ok(EvalOutcome {
        records,
        by_t60,
        by_snr,
        records_path,
    })
}
