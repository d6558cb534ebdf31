//! Simulation and optimization toolkit for chirp-based, DFT-spread
//! integrated sensing and communication waveforms.
//!
//! The crate is organized bottom-up: constellations and probability mass
//! functions, the modulation chain, a delay-Doppler channel, ambiguity
//! function analysis, communication link metrics, probabilistic shaping
//! optimization, and sensing receivers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambiguity;
pub mod channel;
pub mod comm;
pub mod constellation;
pub mod error;
pub mod pcs;
pub mod rng;
pub mod sensing;
pub mod waveform;

pub use ambiguity::{AfGrid, AfMode, AfQuery, AfSurface};
pub use channel::{DelayDopplerChannel, Path};
pub use comm::{EqualizerKind, Link, RingBer};
pub use constellation::{build_qam, pmf_moments, Constellation, Pmf, PmfMoments};
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use pcs::{OptimizerConfig, ParetoPoint, PcsProblem};
pub use sensing::{CfarConfig, MusicConfig, RangeDopplerMap, Target};
pub use waveform::{Modulator, Prefix, WaveformConfig};
