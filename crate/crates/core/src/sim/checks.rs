use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::SimConfig;
use super::experiments::{run_indexed, Link, TrialDraw};
use super::rng::{trial_rng, Stream};
use crate::beamformer::{apply_beamformer, effective_dd_channels, make_beam_grid, structured_dd_channel};
use crate::channel::{apply_channel, noise_variance_for_snr, sample_geometry};
use crate::detector::{detect_mp_mrc, map_oracle};
use crate::error::Result;
use crate::modem::{DelayDopplerFrame, FrameParams, Modem, WindowPair};

const ROUND_TRIP: usize = 0;
const CHANNEL_ORACLE: usize = 1;
const MAP_AGREEMENT: usize = 2;
const NOISE_FREE: usize = 3;

/// Outcome of one self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn relative_error(estimate: &[Complex64], reference: &[Complex64]) -> f64 {
    let diff: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    let norm: f64 = reference.iter().map(Complex64::norm_sqr).sum();
    (diff / norm).sqrt()
}

fn matvec(h: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    h.rows()
        .into_iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Largest `|x_hat - x| / |x|` of OTFS modulation followed directly by
/// demodulation, over `frames` complex Gaussian frames.
pub fn modem_round_trip_error(params: &FrameParams, frames: usize, seed: u64) -> Result<f64> {
    let modem = Modem::new(*params);
    let window = WindowPair::identity();
    let mut worst: f64 = 0.0;
    for t in 0..frames {
        let mut rng = trial_rng(seed, Stream::Check.id(ROUND_TRIP, t));
        let x: Vec<Complex64> = (0..params.grid_len())
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let frame = DelayDopplerFrame::new(x.clone(), params)?;
        let back = modem.otfs_demodulate(&modem.otfs_modulate(&frame, &window)?, &window)?;
        worst = worst.max(relative_error(back.as_slice(), &x));
    }
    Ok(worst)
}

/// Largest relative error between the noise-free beamformed and demodulated
/// frame `y_p` and `H(theta_p) x`, over `frames` channel and symbol draws
/// with `antennas` receive antennas. Both the probe-built and the
/// closed-form channel matrices are checked; the larger error is returned.
pub fn channel_oracle_error(cfg: &SimConfig, antennas: usize, frames: usize, seed: u64) -> Result<f64> {
    let link = Link::from_config(cfg)?;
    let chan_cfg = cfg.channel_config(antennas)?;
    let beam_count = cfg.beam_count(antennas);
    let errors = run_indexed(cfg.run.threads, frames, |t| {
        let mut rng = trial_rng(seed, Stream::Check.id(CHANNEL_ORACLE, t));
        let chan = sample_geometry(&mut rng, &chan_cfg)?;
        let symbols: Vec<usize> = (0..link.params.grid_len())
            .map(|_| rng.random_range(0..link.constellation.len()))
            .collect();
        let x = link.symbols_to_frame(&symbols);
        let frame = DelayDopplerFrame::new(x.clone(), &link.params)?;
        let received = apply_channel(&chan, &link.modem.otfs_modulate(&frame, &link.window)?)?;
        let beams = make_beam_grid(chan.array(), beam_count, link.beam_mode, &chan)?;
        let probed = effective_dd_channels(&link.modem, &chan, &link.window, beams.weights())?;
        let mut worst: f64 = 0.0;
        for (w, h_probe) in beams.weights().iter().zip(&probed) {
            let y = link
                .modem
                .otfs_demodulate(&apply_beamformer(&received, w)?, &link.window)?;
            let h_closed = structured_dd_channel(&link.params, &chan, w)?;
            worst = worst
                .max(relative_error(&matvec(h_probe, &x), y.as_slice()))
                .max(relative_error(&matvec(&h_closed, &x), y.as_slice()));
        }
        Ok(worst)
    })?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// The exhaustive-search scenario: a 2 x 2 QPSK grid, two taps of eight
/// paths each and a two-element array with two beams.
pub fn map_scenario() -> SimConfig {
    let mut cfg = SimConfig {
        modulation: "qpsk".into(),
        ..SimConfig::default()
    };
    cfg.frame.m = 2;
    cfg.frame.n = 2;
    cfg.channel.taps = 2;
    cfg.channel.max_delay = 1;
    cfg.array.antennas = 2;
    cfg
}

/// Symbols on which MP-MRC agrees with the exhaustive MAP decision, and the
/// number of symbols compared, over `trials` draws of `cfg` at `snr_db`.
pub fn map_agreement(cfg: &SimConfig, snr_db: f64, trials: usize, seed: u64) -> Result<(u64, u64)> {
    cfg.validate()?;
    let link = Link::from_config(cfg)?;
    let chan_cfg = cfg.channel_config(cfg.array.antennas)?;
    let beam_count = cfg.beam_count(cfg.array.antennas);
    let noise_variance = noise_variance_for_snr(snr_db, 1.0);
    let counts = run_indexed(cfg.run.threads, trials, |t| {
        let mut rng = trial_rng(seed, Stream::Check.id(MAP_AGREEMENT, t));
        let draw = TrialDraw::draw(&mut rng, &chan_cfg, &link.params, link.constellation.len())?;
        let branches = link.otfs_branches(&draw, beam_count, noise_variance)?;
        let mp = detect_mp_mrc(&branches, &link.constellation, &link.detector)?;
        let map = map_oracle(&branches, &link.constellation)?;
        let matched = mp.decisions.iter().zip(&map).filter(|(a, b)| a == b).count();
        Ok((matched as u64, map.len() as u64))
    })?;
    Ok(counts.into_iter().fold((0, 0), |(m, n), (a, b)| (m + a, n + b)))
}

/// Frames recovered without a symbol error at `sigma^2 = 0`, out of `frames`,
/// with `antennas` receive antennas.
pub fn noise_free_recovery(cfg: &SimConfig, antennas: usize, frames: usize, seed: u64) -> Result<usize> {
    cfg.validate()?;
    let link = Link::from_config(cfg)?;
    let chan_cfg = cfg.channel_config(antennas)?;
    let beam_count = cfg.beam_count(antennas);
    let clean = run_indexed(cfg.run.threads, frames, |t| {
        let mut rng = trial_rng(seed, Stream::Check.id(NOISE_FREE, t));
        let draw = TrialDraw::draw(&mut rng, &chan_cfg, &link.params, link.constellation.len())?;
        let (det, _) = link.otfs_trial(&draw, beam_count, 0.0)?;
        Ok(det.decisions == draw.symbols)
    })?;
    Ok(clean.into_iter().filter(|&ok| ok).count())
}

/// Fast versions of the oracle checks, sized to finish in seconds.
pub fn quick_checks(cfg: &SimConfig) -> Result<Vec<CheckOutcome>> {
    let seed = cfg.run.seed;
    let params = cfg.frame_params()?;
    let mut out = Vec::new();

    let err = modem_round_trip_error(&params, 10, seed)?;
    out.push(CheckOutcome {
        name: "modem_round_trip",
        passed: err <= 1e-12,
        detail: format!("max relative error {err:.3e} over 10 frames (limit 1e-12)"),
    });

    for antennas in [1, cfg.array.antennas] {
        let err = channel_oracle_error(cfg, antennas, 2, seed)?;
        out.push(CheckOutcome {
            name: "effective_channel_oracle",
            passed: err <= 1e-10,
            detail: format!("N_r = {antennas}: max relative error {err:.3e} over 2 frames (limit 1e-10)"),
        });
    }

    let mut scenario = map_scenario();
    scenario.run = cfg.run.clone();
    let (matched, total) = map_agreement(&scenario, 20.0, 20, seed)?;
    out.push(CheckOutcome {
        name: "map_agreement",
        passed: matched as f64 >= 0.95 * total as f64,
        detail: format!("{matched}/{total} symbols agree at 20 dB (need 95%)"),
    });

    let clean = noise_free_recovery(cfg, cfg.array.antennas, 2, seed)?;
    out.push(CheckOutcome {
        name: "noise_free_recovery",
        passed: clean == 2,
        detail: format!("{clean}/2 frames error free at N_r = {}", cfg.array.antennas),
    });

    let mut small = map_scenario();
    small.run.snr_db = vec![5.0];
    small.run.trials = 8;
    let csv = |threads| -> Result<String> {
        let mut run = small.clone();
        run.run.threads = threads;
        Ok(super::run_ber_experiment(&run, &[2])?.trial_table().to_csv())
    };
    let (serial, parallel) = (csv(1)?, csv(2)?);
    out.push(CheckOutcome {
        name: "thread_count_determinism",
        passed: serial == parallel,
        detail: "BER trial table with 1 and 2 workers".into(),
    });
    Ok(out)
}
