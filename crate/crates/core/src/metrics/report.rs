use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Scores for one evaluated utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub utt_id: String,
    /// SDR (dB) per target source under the chosen permutation.
    pub sdr: Vec<f64>,
    /// `perm[s]` is the estimate assigned to target `s`.
    pub perm: Vec<usize>,
    /// SDR of the mixture used as every estimate.
    pub baseline: f64,
    pub sdri: f64,
}

impl UttScore {
    pub fn mean_sdr(&self) -> f64 {
        self.sdr.iter().sum::<f64>() / self.sdr.len() as f64
    }
}

/// Per-utterance and aggregate SDR/SDRi for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    /// What produced the estimates: `model`, `oracle`, `mixture`.
    pub tag: String,
    pub per_utt: Vec<UttScore>,
    pub mean_sdr: f64,
    pub mean_sdri: f64,
    pub baseline: f64,
}

impl SdrReport {
    pub fn from_scores(tag: impl Into<String>, per_utt: Vec<UttScore>) -> Self {
        let n = per_utt.len().max(1) as f64;
        let mean_sdr = per_utt.iter().map(UttScore::mean_sdr).sum::<f64>() / n;
        let mean_sdri = per_utt.iter().map(|u| u.sdri).sum::<f64>() / n;
        let baseline = per_utt.iter().map(|u| u.baseline).sum::<f64>() / n;
        Self { tag: tag.into(), per_utt, mean_sdr, mean_sdri, baseline }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Flat table: `utt_id,sdr,sdri,perm` with the permutation written as `0-1-…`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["utt_id", "sdr", "sdri", "perm"])?;
        for u in &self.per_utt {
            let perm = u.perm.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("-");
            w.write_record([u.utt_id.clone(), u.mean_sdr().to_string(), u.sdri.to_string(), perm])?;
        }
        w.flush()?;
        Ok(())
    }
}
