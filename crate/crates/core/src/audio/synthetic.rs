//! Synthetic "speaker" signals for desk-scale experiments: each speaker owns a
//! frequency band of shaped noise plus a characteristic tone.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::audio::io::write_wav;
use crate::audio::{synth_mixture, MixtureSample, Waveform};
use crate::error::Result;
use crate::params::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerProfile {
    pub band_hz: (f64, f64),
    pub tone_hz: f64,
}

/// `count` speakers with disjoint bands spread over 150 Hz – 3.7 kHz.
pub fn speaker_profiles(count: usize) -> Vec<SpeakerProfile> {
    let (lo, hi) = (150.0, 3700.0);
    let width = (hi - lo) / count.max(1) as f64;
    (0..count)
        .map(|i| {
            let a = lo + i as f64 * width;
            let b = a + 0.8 * width;
            SpeakerProfile { band_hz: (a, b), tone_hz: 0.5 * (a + b) }
        })
        .collect()
}

/// White noise restricted to `[lo, hi]` Hz, scaled to unit RMS.
pub fn band_noise<R: Rng>(rng: &mut R, len: usize, sample_rate: u32, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let hz_per_bin = sample_rate as f64 / len as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * hz_per_bin;
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms == 0.0 {
        out
    } else {
        out.into_iter().map(|v| v / rms).collect()
    }
}

/// One utterance: band noise plus tone under a slow syllable-rate envelope, peak 0.5.
pub fn utterance<R: Rng>(rng: &mut R, profile: &SpeakerProfile, len: usize, sample_rate: u32) -> Vec<f64> {
    let noise = band_noise(rng, len, sample_rate, profile.band_hz.0, profile.band_hz.1);
    let rate_hz = rng.gen_range(2.0..5.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let tone_phase = rng.gen_range(0.0..2.0 * PI);
    let sr = sample_rate as f64;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * rate_hz * t + phase).sin();
            env * (0.5 * noise[i] + (2.0 * PI * profile.tone_hz * t + tone_phase).sin())
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    raw.into_iter().map(|v| 0.5 * v / peak).collect()
}

/// Writes `root/spkNN/uttMM.wav` for a synthetic corpus.
pub fn write_corpus(
    root: &Path,
    speakers: usize,
    utts_per_speaker: usize,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<()> {
    let len = (seconds * sample_rate as f64).round() as usize;
    for (s, profile) in speaker_profiles(speakers).iter().enumerate() {
        let dir = root.join(format!("spk{s:02}"));
        std::fs::create_dir_all(&dir)?;
        for u in 0..utts_per_speaker {
            let mut rng = substream(seed, &format!("corpus/{s}/{u}"));
            let w = Waveform::new(utterance(&mut rng, profile, len, sample_rate), sample_rate)?;
            write_wav(&dir.join(format!("utt{u:02}.wav")), &w)?;
        }
    }
    Ok(())
}

/// Two-source mixtures whose sources occupy separate low and high bands,
/// at SNRs drawn uniformly from 0–5 dB.
pub fn band_split_mixtures(count: usize, seconds: f64, sample_rate: u32, seed: u64) -> Result<Vec<MixtureSample>> {
    let len = (seconds * sample_rate as f64).round() as usize;
    (0..count)
        .map(|k| {
            let mut rng = substream(seed, &format!("band_split/{k}"));
            let low_lo = rng.gen_range(150.0..400.0);
            let low = SpeakerProfile {
                band_hz: (low_lo, low_lo + rng.gen_range(500.0..900.0)),
                tone_hz: rng.gen_range(200.0..1000.0),
            };
            let high_lo = rng.gen_range(1800.0..2200.0);
            let high = SpeakerProfile {
                band_hz: (high_lo, high_lo + rng.gen_range(900.0..1400.0)),
                tone_hz: rng.gen_range(2000.0..3300.0),
            };
            let a = Waveform::new(utterance(&mut rng, &low, len, sample_rate), sample_rate)?;
            let b = Waveform::new(utterance(&mut rng, &high, len, sample_rate), sample_rate)?;
            let snr = rng.gen_range(0.0..=5.0);
            synth_mixture(&[a, b], snr, &[format!("low{k}"), format!("high{k}")])
        })
        .collect()
}
