//! Shared fixtures for the benchmark suite.

use twrn_core::model::{derive_stream, draw_channel, simulate_batch};
use twrn_core::{ChannelState, ObservationBatch, SystemConfig};

/// One reproducible (channel, batch) pair at the default operating point.
pub fn fixture(n: usize, seed: u64) -> (SystemConfig, ChannelState, ObservationBatch) {
    let config = SystemConfig {
        n,
        ..SystemConfig::default()
    };
    let channel = draw_channel(&mut derive_stream(seed, &[0]));
    let batch = simulate_batch(&config, &channel, &mut derive_stream(seed, &[1]), 4)
        .expect("valid fixture");
    (config, channel, batch)
}
