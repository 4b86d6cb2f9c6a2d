//! Objective quality measures: cepstral distance, log-likelihood ratio,
//! frequency-weighted segmental SNR and SRMR, plus time alignment and the
//! per-utterance evaluation record.

mod align;
mod fwseg;
mod lpc;
mod srmr;

use std::f64::consts::PI;
use std::io::Write;

pub use align::{align, align_with_lag, Alignment, MAX_LAG_MS};
pub use fwseg::{fw_snr_seg, fw_snr_seg_frames, FWSEG_BANDS, FWSEG_MAX, FWSEG_MIN};
pub use lpc::{
    autocorrelation, cepstral_distance, cepstral_distance_frames, levinson, llr, llr_frames,
    lpc_cepstrum,
};
pub use srmr::{srmr, srmr_band_energies, SrmrConfig};

use crate::error::{Error, Result};
use crate::signal::AudioSignal;

/// Analysis framing shared by the intrusive measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricFrameConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub lpc_order: usize,
}

impl Default for MetricFrameConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            frame_shift: 256,
            lpc_order: 10,
        }
    }
}

impl MetricFrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_shift == 0 || self.frame_shift > self.frame_len {
            return Err(Error::InvalidArgument(format!(
                "frame shift {} must be in 1..={}",
                self.frame_shift, self.frame_len
            )));
        }
        if self.lpc_order == 0 || self.lpc_order >= self.frame_len {
            return Err(Error::InvalidArgument(format!(
                "lpc order {} must be in 1..{}",
                self.lpc_order, self.frame_len
            )));
        }
        Ok(())
    }
}

/// Hann window without zero end points, as in the usual composite-measure code.
pub(crate) fn analysis_window(len: usize) -> Vec<f64> {
    (1..=len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (len + 1) as f64).cos()))
        .collect()
}

/// Windowed frame pairs over the common length of two signals.
pub(crate) fn frames(
    clean: &AudioSignal,
    test: &AudioSignal,
    cfg: &MetricFrameConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if clean.sample_rate != test.sample_rate {
        return Err(Error::SampleRateMismatch(clean.sample_rate, test.sample_rate));
    }
    let n = clean.len().min(test.len());
    if n < cfg.frame_len {
        return Err(Error::TooShort {
            needed: cfg.frame_len,
            got: n,
        });
    }
    let w = analysis_window(cfg.frame_len);
    let count = (n - cfg.frame_len) / cfg.frame_shift + 1;
    Ok((0..count)
        .map(|f| {
            let start = f * cfg.frame_shift;
            let win = |s: &[f64]| -> Vec<f64> {
                s[start..start + cfg.frame_len]
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .collect()
            };
            (win(&clean.samples), win(&test.samples))
        })
        .collect())
}

/// Scores for one utterance under one method and condition.
///
/// A score is `None` when the measure was undefined for that input (for example a
/// silent output); it is written as an empty CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub utterance_id: String,
    pub method: String,
    pub t60: f64,
    pub snr_db: f64,
    pub cd: Option<f64>,
    pub llr: Option<f64>,
    pub fwsnrseg: Option<f64>,
    pub srmr: Option<f64>,
}

pub const EVAL_CSV_HEADER: &str = "utterance,method,t60,snr_db,cd,llr,fwsnrseg,srmr";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalRecord {
    /// Aligns `test` to `clean` and computes all four measures.
    pub fn compute(
        utterance_id: &str,
        method: &str,
        t60: f64,
        snr_db: f64,
        clean: &AudioSignal,
        test: &AudioSignal,
        cfg: &MetricFrameConfig,
    ) -> Result<Self> {
        let (c, t) = align(clean, test)?;
        let keep = |name: &str, r: Result<f64>| match r {
            Ok(v) if v.is_finite() => Some(v),
            Ok(_) => None,
            Err(e) => {
                log::warn!("{utterance_id}/{method}: {name} undefined: {e}");
                None
            }
        };
        Ok(Self {
            utterance_id: utterance_id.to_string(),
            method: method.to_string(),
            t60,
            snr_db,
            cd: keep("cd", cepstral_distance(&c, &t, cfg)),
            llr: keep("llr", llr(&c, &t, cfg)),
            fwsnrseg: keep("fwsnrseg", fw_snr_seg(&c, &t, cfg)),
            srmr: keep("srmr", srmr(test, &SrmrConfig::default())),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.utterance_id,
            self.method,
            self.t60,
            self.snr_db,
            cell(self.cd),
            cell(self.llr),
            cell(self.fwsnrseg),
            cell(self.srmr)
        )
    }
}

/// Writes the header and one line per record.
pub fn write_eval_csv<W: Write>(mut out: W, records: &[EvalRecord]) -> Result<()> {
    writeln!(out, "{EVAL_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Parses a file written by [`write_eval_csv`].
pub fn read_eval_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == EVAL_CSV_HEADER => {}
        _ => return Err(Error::Config("missing evaluation CSV header".into())),
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Config(format!("bad number {s:?} in evaluation CSV")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Config(format!("expected 8 fields, got {}: {l}", f.len())));
            }
            Ok(EvalRecord {
                utterance_id: f[0].to_string(),
                method: f[1].to_string(),
                t60: num(f[2])?,
                snr_db: num(f[3])?,
                cd: opt(f[4])?,
                llr: opt(f[5])?,
                fwsnrseg: opt(f[6])?,
                srmr: opt(f[7])?,
            })
        })
        .collect()
}
