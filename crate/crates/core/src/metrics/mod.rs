//! Separation quality metrics, the permutation-invariant training objective,
//! and the STFT ideal-ratio-mask oracle.

pub mod irm;
pub mod report;
pub mod sdr;
pub mod stft;

pub use irm::{irm_masks, irm_oracle};
pub use report::{SdrReport, UttScore};
pub use sdr::{pit_loss_node, sdri, si_sdr, usdr_pit_loss, PitResult, MAX_PIT_SOURCES, SDR_CLAMP_DB};
pub use stft::{istft, stft, StftConfig, StftGrid, WindowKind};

/// SDRi figures reported on the full WSJ0-2mix test set. Kept for reference
/// only; nothing in this crate reproduces them at desk scale.
pub mod published {
    /// Pyramid (`py`) separator.
    pub const PY_SDRI_DB: f64 = 18.4;
    /// STFT ideal ratio mask oracle.
    pub const IRM_SDRI_DB: f64 = 12.7;
    /// Re-implemented Conv-TasNet baseline.
    pub const CONV_TASNET_REIMPL_SDRI_DB: f64 = 15.8;
    /// Mean SDR of the unprocessed mixtures.
    pub const MIXTURE_SDR_DB: f64 = 0.15;
}
