//! Shared fixtures for the criterion benches.

use plumekit::config::ToolkitConfig;
use plumekit::synthgen::SynthConfig;

/// A mid-size synthetic scene with one strong plume, sized so each bench
/// iteration stays in the low milliseconds.
pub fn bench_synth_config(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 512,
        height: 512,
        noise_std_ppb: 25.0,
        n_plumes: 2,
        emission_rate_range_tph: (2.0, 4.0),
        spread_a: 2.5,
        seed,
        ..SynthConfig::default()
    }
}

/// Matching detector/pipeline settings.
pub fn bench_toolkit_config() -> ToolkitConfig {
    let mut cfg = ToolkitConfig::default();
    cfg.oracle_k.k = 2.0;
    cfg.window.size = 256;
    cfg.window.overlap = 0.5;
    cfg.postproc.tau = 0.6;
    cfg
}
