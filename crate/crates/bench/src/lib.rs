//! Shared fixtures for the criterion benches.

use dafts_core::channel::{db_to_linear, effective_channel_matrix};
use dafts_core::comm::ChannelStats;
use dafts_core::{build_qam, Constellation, DelayDopplerChannel, EqualizerKind, PcsProblem, WaveformConfig};

/// The default experiment waveform: N = 64, M = 32, S = 1, c1 = 5/(2N).
pub fn waveform() -> WaveformConfig {
    WaveformConfig::new(64, 32, 1, 5.0 / 128.0)
}

pub fn qam64() -> Constellation {
    build_qam(64).expect("64-QAM is supported")
}

/// PCS problem on the default three-path channel with MMSE equalization.
pub fn pcs_problem(snr_db: f64) -> PcsProblem {
    let c = qam64();
    let h = effective_channel_matrix(&DelayDopplerChannel::three_path(1), &waveform()).expect("valid channel");
    let stats = ChannelStats::from_channel(&h, db_to_linear(snr_db), EqualizerKind::Mmse).expect("MMSE is well posed");
    PcsProblem::new(&c, stats)
}
