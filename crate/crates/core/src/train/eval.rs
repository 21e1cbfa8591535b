use crate::audio::{Manifest, MixtureSample, Split};
use crate::error::{Error, Result};
use crate::metrics::sdr::mixture_baseline;
use crate::metrics::{irm_oracle, usdr_pit_loss, SdrReport, StftConfig, UttScore};
use crate::model::SeparationModel;
use crate::params::ParamStore;
use crate::train::checkpoint::Checkpoint;

/// Anything that turns a mixture into per-source estimates.
pub trait Estimator {
    /// Report tag.
    fn tag(&self) -> String;

    fn estimate(&self, sample: &MixtureSample) -> Result<Vec<Vec<f64>>>;
}

/// A trained separator, run on whole utterances.
#[derive(Debug)]
pub struct ModelEstimator {
    pub model: SeparationModel,
    pub params: ParamStore,
}

impl ModelEstimator {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = SeparationModel::new(ck.config.frontend, &ck.config.separator)?;
        Ok(Self { model, params: ck.params.clone() })
    }
}

impl Estimator for ModelEstimator {
    fn tag(&self) -> String {
        self.model.separator().name().to_string()
    }

    fn estimate(&self, sample: &MixtureSample) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .model
            .separate(&self.params, &sample.mixture, None)?
            .into_iter()
            .map(|w| w.into_samples())
            .collect())
    }
}

/// Ideal-ratio-mask upper bound computed from the reference sources.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimator {
    pub stft: StftConfig,
}

impl Estimator for OracleEstimator {
    fn tag(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, sample: &MixtureSample) -> Result<Vec<Vec<f64>>> {
        let sources: Vec<&[f64]> = sample.sources.iter().map(|s| s.samples()).collect();
        irm_oracle(&sources, sample.mixture.samples(), self.stft)
    }
}

/// Returns the mixture for every source; scores SDRi = 0 by definition.
#[derive(Debug, Clone, Copy)]
pub struct MixtureEstimator;

impl Estimator for MixtureEstimator {
    fn tag(&self) -> String {
        "mixture".into()
    }

    fn estimate(&self, sample: &MixtureSample) -> Result<Vec<Vec<f64>>> {
        Ok(vec![sample.mixture.samples().to_vec(); sample.num_sources()])
    }
}

pub const ESTIMATOR_NAMES: [&str; 3] = ["model", "oracle", "mixture"];

/// Builds an estimator by name; `model` needs a checkpoint.
pub fn build_estimator(name: &str, checkpoint: Option<&Checkpoint>, sample_rate: u32) -> Result<Box<dyn Estimator>> {
    match name {
        "model" => {
            let ck = checkpoint.ok_or_else(|| Error::Config("the model estimator needs a checkpoint".into()))?;
            Ok(Box::new(ModelEstimator::from_checkpoint(ck)?))
        }
        "oracle" => Ok(Box::new(OracleEstimator { stft: StftConfig::for_sample_rate(sample_rate) })),
        "mixture" => Ok(Box::new(MixtureEstimator)),
        other => Err(Error::Config(format!(
            "unknown estimator `{other}` (known: {})",
            ESTIMATOR_NAMES.join(", ")
        ))),
    }
}

/// PIT-matched SDR and SDRi for every utterance.
pub fn evaluate(estimator: &dyn Estimator, samples: &[(String, MixtureSample)]) -> Result<SdrReport> {
    let mut scores = Vec::with_capacity(samples.len());
    for (utt_id, sample) in samples {
        let estimates = estimator.estimate(sample)?;
        let targets: Vec<&[f64]> = sample.sources.iter().map(|s| s.samples()).collect();
        let pit = usdr_pit_loss(&estimates, &targets)?;
        let baseline = mixture_baseline(&targets, sample.mixture.samples())?;
        scores.push(UttScore {
            utt_id: utt_id.clone(),
            sdr: pit.sdrs,
            perm: pit.permutation,
            baseline,
            sdri: -pit.loss - baseline,
        });
    }
    Ok(SdrReport::from_scores(estimator.tag(), scores))
}

pub fn evaluate_manifest(estimator: &dyn Estimator, manifest: &Manifest, split: Split, sample_rate: u32) -> Result<SdrReport> {
    if manifest.split(split).is_empty() {
        return Err(Error::Precondition(format!("manifest has no {split} entries")));
    }
    evaluate(estimator, &manifest.load_samples(split, sample_rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synthetic::band_split_mixtures;

    fn samples() -> Vec<(String, MixtureSample)> {
        band_split_mixtures(3, 0.25, 8000, 4)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (format!("utt{i}"), s))
            .collect()
    }

    #[test]
    fn mixture_passthrough_scores_zero_improvement() {
        let r = evaluate(&MixtureEstimator, &samples()).unwrap();
        assert_eq!(r.tag, "mixture");
        assert!(r.mean_sdri.abs() < 1e-9, "{}", r.mean_sdri);
    }

    #[test]
    fn oracle_is_tagged_and_improves() {
        let est = build_estimator("oracle", None, 8000).unwrap();
        let r = evaluate(est.as_ref(), &samples()).unwrap();
        assert_eq!(r.tag, "oracle");
        assert!(r.mean_sdri > 5.0, "{}", r.mean_sdri);
    }

    #[test]
    fn unknown_or_incomplete_estimators_are_config_errors() {
        assert!(build_estimator("magic", None, 8000).err().unwrap().is_config());
        assert!(build_estimator("model", None, 8000).err().unwrap().is_config());
    }
}
