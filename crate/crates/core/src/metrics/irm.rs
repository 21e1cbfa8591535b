//! Ideal ratio mask oracle: per time-frequency cell, each source's share of
//! the summed source magnitudes, applied to the mixture spectrogram.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metrics::stft::{istft, stft, StftConfig, StftGrid};

/// Magnitude-ratio masks for each source. Cells where every source is silent get `1/S`.
pub fn irm_masks(sources: &[StftGrid]) -> Result<Vec<Array2<f64>>> {
    let Some(first) = sources.first() else {
        return Err(Error::Precondition("no sources".into()));
    };
    let dim = first.bins.raw_dim();
    if sources.iter().any(|s| s.bins.raw_dim() != dim) {
        return Err(Error::Shape("source spectrograms differ in shape".into()));
    }
    let count = sources.len() as f64;
    let mags: Vec<Array2<f64>> = sources.iter().map(|s| s.bins.mapv(|c| c.norm())).collect();
    let mut total = Array2::<f64>::zeros(dim);
    for m in &mags {
        total += m;
    }
    Ok(mags
        .into_iter()
        .map(|mut m| {
            ndarray::Zip::from(&mut m)
                .and(&total)
                .for_each(|m, &t| *m = if t == 0.0 { 1.0 / count } else { *m / t });
            m
        })
        .collect())
}

/// Separates `mixture` with oracle masks computed from the true `sources`,
/// keeping the mixture phase.
pub fn irm_oracle<S: AsRef<[f64]>>(sources: &[S], mixture: &[f64], config: StftConfig) -> Result<Vec<Vec<f64>>> {
    if sources.iter().any(|s| s.as_ref().len() != mixture.len()) {
        return Err(Error::Shape("sources and mixture must share a length".into()));
    }
    let grids = sources
        .iter()
        .map(|s| stft(s.as_ref(), config))
        .collect::<Result<Vec<_>>>()?;
    let mix = stft(mixture, config)?;
    irm_masks(&grids)?
        .into_iter()
        .map(|mask| {
            let mut masked = mix.clone();
            ndarray::Zip::from(&mut masked.bins).and(&mask).for_each(|c, &m| *c *= m);
            istft(&masked)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::stft::WindowKind;

    fn cfg() -> StftConfig {
        StftConfig { win_len: 16, hop: 8, window: WindowKind::SqrtHann }
    }

    #[test]
    fn equal_sources_get_half_masks() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let g = stft(&x, cfg()).unwrap();
        let masks = irm_masks(&[g.clone(), g]).unwrap();
        assert!(masks.iter().all(|m| m.iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn silent_source_gets_zero_mask() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let silent = vec![0.0; 40];
        let gx = stft(&x, cfg()).unwrap();
        let gs = stft(&silent, cfg()).unwrap();
        let masks = irm_masks(&[gx.clone(), gs]).unwrap();
        for ((a, b), c) in masks[0].iter().zip(masks[1].iter()).zip(gx.bins.iter()) {
            if c.norm() == 0.0 {
                assert_eq!((*a, *b), (0.5, 0.5));
            } else {
                assert_eq!((*a, *b), (1.0, 0.0));
            }
        }
        let out = irm_oracle(&[x.clone(), silent.clone()], &x, cfg()).unwrap();
        for (a, b) in out[0].iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
