//! Time-domain speech separation with gated temporal convolutional networks.
//!
//! A learned encoder turns a waveform into a non-negative frame
//! representation, a separator estimates one mask per source, and a shared
//! linear decoder maps each masked representation back to a waveform.
//! Everything is differentiated by a small reverse-mode tape in [`graph`].

pub mod audio;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod separators;
pub mod tcn;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId, Tensor};
pub use params::{Initializer, ParamStore};
