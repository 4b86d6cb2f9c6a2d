//! Fixed-width results table and per-method SRMR-vs-T60 series.

use std::fs;
use std::path::{Path, PathBuf};

use super::evaluate::{aggregate, GroupBy};
use crate::error::{Error, Result};
use crate::metrics::{read_eval_csv, EvalRecord};

/// With at most this many distinct (rounded) SNRs the table gets one column per SNR.
pub const MAX_SNR_COLUMNS: usize = 4;

const METRICS: [&str; 4] = ["CD", "LLR", "fwSNRseg", "SRMR"];
const PESQ_NOTE: &str = "PESQ omitted: no licensed reference implementation is bundled.";

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: String,
    /// (method, `t60,srmr` CSV) pairs in method order.
    pub series: Vec<(String, String)>,
}

fn pick(r: &EvalRecord, metric: usize) -> Option<f64> {
    [r.cd, r.llr, r.fwsnrseg, r.srmr][metric]
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = v.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn build_report(records: &[EvalRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::Config("no evaluation records to report".into()));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut snrs: Vec<f64> = records.iter().map(|r| r.snr_db.round()).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let per_snr = snrs.len() <= MAX_SNR_COLUMNS;
    let groups: Vec<Option<f64>> = if per_snr { snrs.iter().map(|&s| Some(s)).collect() } else { vec![None] };

    let name_w = methods.iter().map(|m| m.len()).max().unwrap_or(0).max("Method".len()) + 2;
    let label = |m: &str, g: &Option<f64>| match g {
        Some(s) => format!("{m}@{s}dB"),
        None => m.to_string(),
    };
    let col_w = METRICS
        .iter()
        .flat_map(|m| groups.iter().map(move |g| label(m, g).len()))
        .max()
        .unwrap_or(0)
        .max(8)
        + 2;
    let mut table = String::new();
    table.push_str(&format!("# {PESQ_NOTE}\n"));
    if !per_snr {
        table.push_str(&format!("# {} distinct SNRs; columns average over all of them.\n", snrs.len()));
    }
    let mut head = format!("{:<name_w$}", "Method");
    for m in METRICS {
        for g in &groups {
            head.push_str(&format!("{:>col_w$}", label(m, g)));
        }
    }
    table.push_str(head.trim_end());
    table.push('\n');
    table.push_str(&"-".repeat(name_w + col_w * METRICS.len() * groups.len()));
    table.push('\n');
    for m in &methods {
        let mut line = format!("{m:<name_w$}");
        for k in 0..METRICS.len() {
            for g in &groups {
                let v = mean(
                    records
                        .iter()
                        .filter(|r| r.method == *m && g.is_none_or(|s| r.snr_db.round() == s))
                        .map(|r| pick(r, k)),
                );
                let cell = v.map_or("-".to_string(), |x| format!("{x:.3}"));
                line.push_str(&format!("{cell:>col_w$}"));
            }
        }
        table.push_str(&line);
        table.push('\n');
    }

    let by_t60 = aggregate(records, GroupBy::T60);
    let series = methods
        .iter()
        .map(|m| {
            let mut s = String::from("t60,srmr\n");
            for a in by_t60.iter().filter(|a| a.method == *m) {
                s.push_str(&format!("{},{}\n", a.key, a.srmr.map(|v| format!("{v:.6}")).unwrap_or_default()));
            }
            (m.to_string(), s)
        })
        .collect();
    Ok(Report { table, series })
}

pub fn report_from_csv(text: &str) -> Result<Report> {
    build_report(&read_eval_csv(text)?)
}

/// Reads `records.csv` from `eval_dir` and writes `report.txt` plus one
/// `srmr_vs_t60_<method>.csv` per method. Returns the written paths.
pub fn write_report(eval_dir: impl AsRef<Path>) -> Result<(Report, Vec<PathBuf>)> {
    let dir = eval_dir.as_ref();
    let report = report_from_csv(&fs::read_to_string(dir.join("records.csv"))?)?;
    let mut paths = vec![dir.join("report.txt")];
    fs::write(&paths[0], &report.table)?;
    for (m, s) in &report.series {
        let p = dir.join(format!("srmr_vs_t60_{m}.csv"));
        fs::write(&p, s)?;
        paths.push(p);
    }
    Ok((report, paths))
}
