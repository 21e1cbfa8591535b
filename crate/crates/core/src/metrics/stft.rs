//! Short-time Fourier transform with weighted overlap-add inversion.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    SqrtHann,
    Hann,
    Rectangular,
}

/// Analysis and synthesis use the same window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// 32 ms square-root Hann window with 50% hop.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let win_len = (sample_rate as f64 * 0.032).round() as usize;
        Self { win_len, hop: win_len / 2, window: WindowKind::SqrtHann }
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.win_len as f64;
        (0..self.win_len)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
                match self.window {
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Hann => hann,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }

    /// Checks the overlap-add condition and returns the constant window-square sum.
    pub fn validate(&self) -> Result<f64> {
        if self.win_len == 0 || self.hop == 0 {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        if self.hop > self.win_len {
            return Err(Error::Config(format!("hop {} exceeds window {}", self.hop, self.win_len)));
        }
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        let max = sums.iter().copied().fold(f64::MIN, f64::max);
        let min = sums.iter().copied().fold(f64::MAX, f64::min);
        if min <= 0.0 || (max - min) > 1e-9 * max {
            return Err(Error::Config(format!(
                "{:?} window of {} with hop {} does not satisfy overlap-add reconstruction",
                self.window, self.win_len, self.hop
            )));
        }
        Ok(max)
    }

    pub fn num_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    /// Leading zero padding so the first sample sees full window overlap.
    fn front_pad(&self) -> usize {
        self.win_len - self.hop
    }
}

/// Complex spectrogram, `frames × bins` (non-negative frequencies only).
#[derive(Debug, Clone, PartialEq)]
pub struct StftGrid {
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
    /// Length of the analysed signal, restored by [`istft`].
    pub signal_len: usize,
}

impl StftGrid {
    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }
}

pub fn stft(signal: &[f64], config: StftConfig) -> Result<StftGrid> {
    config.validate()?;
    if signal.is_empty() {
        return Err(Error::Precondition("empty signal".into()));
    }
    let (win, hop) = (config.win_len, config.hop);
    let pad = config.front_pad();
    let last = pad + signal.len() - 1;
    let frames = last / hop + 1;
    let mut padded = vec![0.0; (frames - 1) * hop + win];
    padded[pad..pad + signal.len()].copy_from_slice(signal);

    let window = config.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut bins = Array2::zeros((frames, config.num_bins()));
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    for t in 0..frames {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[t * hop + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in bins.row_mut(t).iter_mut().enumerate() {
            *v = buf[k];
        }
    }
    Ok(StftGrid { bins, config, signal_len: signal.len() })
}

pub fn istft(grid: &StftGrid) -> Result<Vec<f64>> {
    let config = grid.config;
    let norm = config.validate()?;
    let (win, hop) = (config.win_len, config.hop);
    if grid.bins.ncols() != config.num_bins() {
        return Err(Error::Shape(format!(
            "grid has {} bins, expected {}",
            grid.bins.ncols(),
            config.num_bins()
        )));
    }
    let frames = grid.frames();
    let window = config.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(win);
    let mut out = vec![0.0; (frames.max(1) - 1) * hop + win];
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    for t in 0..frames {
        let row = grid.bins.row(t);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < row.len() { row[k] } else { row[win - k].conj() };
        }
        ifft.process(&mut buf);
        for j in 0..win {
            out[t * hop + j] += buf[j].re / win as f64 * window[j];
        }
    }
    let pad = config.front_pad();
    let end = pad + grid.signal_len;
    if end > out.len() {
        return Err(Error::Shape("grid too short for the recorded signal length".into()));
    }
    Ok(out[pad..end].iter().map(|v| v / norm).collect())
}
