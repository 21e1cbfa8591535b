//! Fixed-length segmentation of utterances and exact reassembly.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// What [`reassemble`] needs to undo [`segment_utterance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingRecord {
    pub original_len: usize,
    pub seg_len: usize,
    pub hop: usize,
    /// Zeros appended after the last real sample.
    pub pad: usize,
}

impl PaddingRecord {
    pub fn new(original_len: usize, seg_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 || seg_len == 0 {
            return Err(Error::Precondition("segment length and hop must be positive".into()));
        }
        if hop > seg_len {
            return Err(Error::Precondition(format!("hop {hop} exceeds segment length {seg_len}")));
        }
        let count = Self::count_for(original_len, seg_len, hop);
        let pad = (count - 1) * hop + seg_len - original_len;
        Ok(Self { original_len, seg_len, hop, pad })
    }

    fn count_for(len: usize, seg_len: usize, hop: usize) -> usize {
        if len <= seg_len {
            1
        } else {
            (len - seg_len).div_ceil(hop) + 1
        }
    }

    pub fn num_segments(&self) -> usize {
        Self::count_for(self.original_len, self.seg_len, self.hop)
    }
}

/// Cuts `w` into segments of `seg_len` every `hop` samples, zero-padding the tail.
pub fn segment_utterance(w: &[f64], seg_len: usize, hop: usize) -> Result<(Vec<Vec<f64>>, PaddingRecord)> {
    let record = PaddingRecord::new(w.len(), seg_len, hop)?;
    let mut padded = w.to_vec();
    padded.resize(w.len() + record.pad, 0.0);
    let segments = (0..record.num_segments())
        .map(|i| padded[i * hop..i * hop + seg_len].to_vec())
        .collect();
    Ok((segments, record))
}

/// Inverse of [`segment_utterance`]; overlapping samples are averaged.
pub fn reassemble<S: AsRef<[f64]>>(segments: &[S], record: &PaddingRecord) -> Result<Vec<f64>> {
    if segments.len() != record.num_segments() {
        return Err(Error::Shape(format!(
            "{} segments, record expects {}",
            segments.len(),
            record.num_segments()
        )));
    }
    let total = record.original_len + record.pad;
    let mut sum = vec![0.0; total];
    let mut count = vec![0u32; total];
    for (i, seg) in segments.iter().enumerate() {
        let seg = seg.as_ref();
        if seg.len() != record.seg_len {
            return Err(Error::Shape(format!("segment {i} has {} samples", seg.len())));
        }
        let start = i * record.hop;
        for (k, v) in seg.iter().enumerate() {
            sum[start + k] += v;
            count[start + k] += 1;
        }
    }
    Ok(sum
        .iter()
        .zip(&count)
        .take(record.original_len)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

/// Segment a waveform; convenience over [`segment_utterance`].
pub fn segment_waveform(w: &Waveform, seg_len: usize, hop: usize) -> Result<(Vec<Vec<f64>>, PaddingRecord)> {
    segment_utterance(w.samples(), seg_len, hop)
}
