//! Waveforms, mixture synthesis, segmentation and dataset manifests.

pub mod io;
pub mod manifest;
pub mod segment;
pub mod synthetic;

use crate::error::{Error, Result};

pub use manifest::{build_manifest, Manifest, ManifestEntry, Split};
pub use segment::{reassemble, segment_utterance, PaddingRecord};

/// Sample rate every signal is brought to on ingest.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono audio with real-valued samples (nominal range `[-1, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("waveform must have at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Precondition("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Precondition(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self { samples: self.samples[..len.min(self.samples.len())].to_vec(), sample_rate: self.sample_rate }
    }
}

impl AsRef<[f64]> for Waveform {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

/// A mixture with its aligned sources. `sources[0]` is the level reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub snr_db: f64,
    pub source_ids: Vec<String>,
}

impl MixtureSample {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Largest deviation of the mixture from the sum of its sources.
    pub fn sum_residual(&self) -> f64 {
        self.mixture
            .samples()
            .iter()
            .enumerate()
            .map(|(i, m)| (m - self.sources.iter().map(|s| s.samples()[i]).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }
}

/// Returns `gain · interferer` such that `10·log10(P_target / P_scaled) = snr_db`.
pub fn scale_to_snr(target: &Waveform, interferer: &Waveform, snr_db: f64) -> Result<Waveform> {
    if target.len() != interferer.len() {
        return Err(Error::Shape(format!(
            "target has {} samples, interferer {}",
            target.len(),
            interferer.len()
        )));
    }
    if target.sample_rate() != interferer.sample_rate() {
        return Err(Error::Shape("sample rates differ".into()));
    }
    let p_interferer = interferer.power();
    if p_interferer == 0.0 {
        return Err(Error::Degenerate("interferer has zero energy".into()));
    }
    let p_target = target.power();
    if p_target == 0.0 {
        return Err(Error::Degenerate("target has zero energy".into()));
    }
    let gain = (p_target / (p_interferer * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(interferer.scaled(gain))
}

/// Mixes `sources` at `snr_db` relative to the first source.
///
/// All sources are truncated to the shortest one; every source after the
/// first is rescaled, and the stored sources are the rescaled versions so the
/// mixture is exactly their sum.
pub fn synth_mixture(sources: &[Waveform], snr_db: f64, ids: &[String]) -> Result<MixtureSample> {
    if sources.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 sources, got {}", sources.len())));
    }
    if ids.len() != sources.len() {
        return Err(Error::Precondition(format!("{} ids for {} sources", ids.len(), sources.len())));
    }
    let rate = sources[0].sample_rate();
    if sources.iter().any(|s| s.sample_rate() != rate) {
        return Err(Error::Shape("sources have different sample rates".into()));
    }
    let len = sources.iter().map(Waveform::len).min().unwrap_or(0);
    let reference = sources[0].truncated(len);
    let mut stored = vec![reference.clone()];
    for s in &sources[1..] {
        stored.push(scale_to_snr(&reference, &s.truncated(len), snr_db)?);
    }
    let mut mix = vec![0.0; len];
    for s in &stored {
        for (m, v) in mix.iter_mut().zip(s.samples()) {
            *m += v;
        }
    }
    Ok(MixtureSample {
        mixture: Waveform::new(mix, rate)?,
        sources: stored,
        snr_db,
        source_ids: ids.to_vec(),
    })
}
