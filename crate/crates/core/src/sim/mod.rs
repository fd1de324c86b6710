//! Monte-Carlo experiments: paired OTFS/OFDM BER, effective-channel
//! sparsity versus array size, and detector convergence.
//!
//! Every trial owns an RNG stream derived from the master seed and the
//! trial's position in the grid, draws channel, symbols and noise in that
//! order, and results are merged in trial order. Outputs therefore depend
//! only on the configuration and seed, not on the worker count.
//!
//! SNR is the received symbol energy per antenna over the per-sample noise
//! variance. Channels have unit expected power and constellations unit
//! energy, so `sigma^2 = 10^(-SNR/10)`.

mod checks;
mod config;
mod experiments;
mod report;
mod rng;
mod stats;

pub use checks::{
    channel_oracle_error, map_agreement, map_scenario, modem_round_trip_error, noise_free_recovery, quick_checks,
    CheckOutcome,
};
pub use config::{
    ArraySection, BeamSection, BerSection, ChannelSection, ConvergenceSection, FrameSection, RunSection, SimConfig,
    SparsitySection,
};
pub use experiments::{
    build_branches, run_ber_experiment, run_convergence_experiment, run_indexed, run_sparsity_experiment,
    BerExperiment, BerPoint, ConvergenceExperiment, ConvergencePoint, ErrorCount, Link, SparsityExperiment,
    SparsityPoint, TrialDraw, TrialRecord, CONFIDENCE,
};
pub use report::{fmt_f64, ExperimentOutput};
pub use rng::{trial_rng, Stream};
pub use stats::{clopper_pearson, mean, rate, snr_at_ber};

/// Plain-text description of a run: the resolved configuration and seed.
pub fn manifest(cfg: &SimConfig, experiment: &str) -> String {
    let params = cfg.frame_params().ok();
    let mut text = String::new();
    text.push_str(&format!("experiment = {experiment}\n"));
    text.push_str(&format!("seed = {}\n", cfg.run.seed));
    text.push_str(&format!("crate_version = {}\n", env!("CARGO_PKG_VERSION")));
    if let Some(p) = params {
        text.push_str(&format!("resolved_cp_samples = {}\n", p.cp_len()));
        text.push_str(&format!("sample_interval_s = {}\n", fmt_f64(p.sample_interval_s())));
    }
    text.push_str("snr_definition = received symbol energy per antenna over per-sample noise variance\n");
    text.push_str(&format!(
        "ber_confidence = {CONFIDENCE} (exact binomial interval over bits)\n"
    ));
    text.push_str("\n# resolved configuration\n");
    text.push_str(&cfg.to_toml_string());
    text
}
