use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::config::SimConfig;
use super::report::{fmt_f64, ExperimentOutput};
use super::rng::{trial_rng, Stream};
use super::stats::{clopper_pearson, mean, rate};
use crate::beamformer::{
    apply_beamformer, branch_channel, make_beam_grid, sparsity_report, BeamGrid, BeamMode, BranchObservation,
};
use crate::channel::{apply_channel, awgn, noise_variance_for_snr, sample_geometry, ChannelConfig, GeometricChannel};
use crate::detector::{
    detect_mp_mrc, midpoint_frequency_response, mmse_mrc_ofdm, Constellation, DetectionResult, DetectorConfig,
};
use crate::error::{Error, Result};
use crate::modem::{DelayDopplerFrame, FrameParams, Modem, TimeFrequencyGrid, WindowPair};

/// Confidence level of every reported BER interval.
pub const CONFIDENCE: f64 = 0.95;

/// Error tallies of one receiver over one or more frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCount {
    pub bit_errors: u64,
    pub symbol_errors: u64,
    pub bits: u64,
    pub symbols: u64,
}

impl ErrorCount {
    pub fn between(constellation: &Constellation, sent: &[usize], decided: &[usize]) -> Self {
        let mut count = ErrorCount {
            bits: (sent.len() as u64) * u64::from(constellation.bits_per_symbol()),
            symbols: sent.len() as u64,
            ..Default::default()
        };
        for (&s, &d) in sent.iter().zip(decided) {
            if s != d {
                count.symbol_errors += 1;
                count.bit_errors += u64::from(constellation.bit_errors(s, d));
            }
        }
        count
    }

    pub fn add(&mut self, other: &ErrorCount) {
        self.bit_errors += other.bit_errors;
        self.symbol_errors += other.symbol_errors;
        self.bits += other.bits;
        self.symbols += other.symbols;
    }

    pub fn ber(&self) -> f64 {
        rate(self.bit_errors, self.bits)
    }

    pub fn ser(&self) -> f64 {
        rate(self.symbol_errors, self.symbols)
    }

    /// Exact binomial interval on the bit error rate.
    pub fn ber_interval(&self) -> (f64, f64) {
        clopper_pearson(self.bit_errors, self.bits, CONFIDENCE)
    }
}

/// Outcome of one simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// RNG stream the trial was drawn from.
    pub trial_id: u64,
    pub snr_db: f64,
    pub num_antennas: usize,
    pub otfs: ErrorCount,
    /// OFDM baseline on the same channel and noise, when simulated.
    pub ofdm: Option<ErrorCount>,
    pub iterations: usize,
    /// Largest branch sparsity `S`.
    pub sparsity: usize,
    /// Excluded from every CSV so outputs stay reproducible.
    pub wall_time_s: f64,
}

/// Random draws of one trial, in draw order.
#[derive(Debug, Clone)]
pub struct TrialDraw {
    pub channel: GeometricChannel,
    pub symbols: Vec<usize>,
    /// Unit-variance noise, one column per antenna.
    pub noise: Array2<Complex64>,
}

impl TrialDraw {
    /// Draws the channel, then the symbols, then the noise.
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        chan_cfg: &ChannelConfig,
        params: &FrameParams,
        alphabet: usize,
    ) -> Result<Self> {
        let channel = sample_geometry(rng, chan_cfg)?;
        let symbols = (0..params.grid_len()).map(|_| rng.random_range(0..alphabet)).collect();
        let noise = awgn(rng, params.frame_len(), chan_cfg.array.num_antennas(), 1.0)?;
        Ok(Self {
            channel,
            symbols,
            noise,
        })
    }

    /// `signal` through the channel plus the stored noise scaled to `noise_variance`.
    pub fn receive(&self, signal: &[Complex64], noise_variance: f64) -> Result<Array2<Complex64>> {
        let mut r = apply_channel(&self.channel, signal)?;
        if noise_variance > 0.0 {
            let sd = noise_variance.sqrt();
            r.zip_mut_with(&self.noise, |y, z| *y += z * sd);
        }
        Ok(r)
    }
}

/// Beamforms `received` into every branch of `beams`, demodulates each
/// branch and attaches its effective channel. Branch noise is `sigma^2 |w|^2`.
pub fn build_branches(
    modem: &Modem,
    chan: &GeometricChannel,
    window: &WindowPair,
    beams: &BeamGrid,
    received: &Array2<Complex64>,
    noise_variance: f64,
    threshold: f64,
) -> Result<Vec<BranchObservation>> {
    beams
        .directions()
        .iter()
        .zip(beams.weights())
        .map(|(&theta, w)| {
            let y = modem.otfs_demodulate(&apply_beamformer(received, w)?, window)?;
            let h = branch_channel(modem, chan, window, w)?;
            let gain: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            BranchObservation::new(theta, y, h, noise_variance * gain, threshold)
        })
        .collect()
}

/// Everything fixed across the trials of one experiment.
#[derive(Debug, Clone)]
pub struct Link {
    pub params: FrameParams,
    pub modem: Modem,
    pub constellation: Constellation,
    pub detector: DetectorConfig,
    pub beam_mode: BeamMode,
    pub window: WindowPair,
}

impl Link {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        let params = cfg.frame_params()?;
        Ok(Self {
            params,
            modem: Modem::new(params),
            constellation: cfg.constellation()?,
            detector: cfg.detector,
            beam_mode: cfg.beams.mode,
            window: WindowPair::identity(),
        })
    }

    pub fn symbols_to_frame(&self, symbols: &[usize]) -> Vec<Complex64> {
        symbols.iter().map(|&s| self.constellation.point(s)).collect()
    }

    /// OTFS transmission of the drawn symbols, received on `beam_count` branches.
    pub fn otfs_branches(
        &self,
        draw: &TrialDraw,
        beam_count: usize,
        noise_variance: f64,
    ) -> Result<Vec<BranchObservation>> {
        let x = DelayDopplerFrame::new(self.symbols_to_frame(&draw.symbols), &self.params)?;
        let s = self.modem.otfs_modulate(&x, &self.window)?;
        let received = draw.receive(&s, noise_variance)?;
        let beams = make_beam_grid(draw.channel.array(), beam_count, self.beam_mode, &draw.channel)?;
        build_branches(
            &self.modem,
            &draw.channel,
            &self.window,
            &beams,
            &received,
            noise_variance,
            self.detector.support_threshold,
        )
    }

    /// OTFS transmission and MP-MRC detection with `beam_count` branches.
    /// Also returns the largest branch sparsity.
    pub fn otfs_trial(
        &self,
        draw: &TrialDraw,
        beam_count: usize,
        noise_variance: f64,
    ) -> Result<(DetectionResult, usize)> {
        let branches = self.otfs_branches(draw, beam_count, noise_variance)?;
        let sparsity = branches.iter().map(BranchObservation::sparsity).max().unwrap_or(0);
        Ok((detect_mp_mrc(&branches, &self.constellation, &self.detector)?, sparsity))
    }

    /// OFDM transmission of the same symbols with MMSE-MRC detection.
    pub fn ofdm_trial(&self, draw: &TrialDraw, noise_variance: f64) -> Result<Vec<usize>> {
        let x = TimeFrequencyGrid::new(self.symbols_to_frame(&draw.symbols), &self.params)?;
        let s = self.modem.ofdm_modulate(&x)?;
        let received = draw.receive(&s, noise_variance)?;
        let grids = received
            .columns()
            .into_iter()
            .map(|col| self.modem.ofdm_demodulate(&col.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let response = midpoint_frequency_response(&draw.channel, &self.params);
        mmse_mrc_ofdm(&grids, &response, noise_variance, &self.constellation)
    }
}

/// Runs `task(i)` for `i < count` on `threads` workers (0 = all cores) and
/// returns the results in index order.
pub fn run_indexed<T, F>(threads: usize, count: usize, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("run.threads", e.to_string()))?;
    pool.install(|| (0..count).into_par_iter().map(&task).collect())
}

/// Aggregated BER at one `(N_r, SNR)` point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub num_antennas: usize,
    pub snr_db: f64,
    pub frames: usize,
    pub otfs: ErrorCount,
    pub ofdm: ErrorCount,
    pub mean_iterations: f64,
    pub mean_sparsity: f64,
}

impl BerPoint {
    /// OTFS beats OFDM with non-overlapping confidence intervals.
    pub fn otfs_significantly_better(&self) -> bool {
        self.otfs.ber_interval().1 < self.ofdm.ber_interval().0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerExperiment {
    pub points: Vec<BerPoint>,
    pub trials: Vec<TrialRecord>,
}

impl BerExperiment {
    pub fn summary(&self) -> ExperimentOutput {
        let mut out = ExperimentOutput::new(
            "ber",
            &[
                "n_r",
                "snr_db",
                "frames",
                "bits",
                "otfs_bit_errors",
                "otfs_ber",
                "otfs_ber_low",
                "otfs_ber_high",
                "otfs_ser",
                "ofdm_bit_errors",
                "ofdm_ber",
                "ofdm_ber_low",
                "ofdm_ber_high",
                "ofdm_ser",
                "mean_iterations",
                "mean_sparsity",
                "otfs_better",
            ],
        );
        for p in &self.points {
            let (ol, oh) = p.otfs.ber_interval();
            let (fl, fh) = p.ofdm.ber_interval();
            out.push(vec![
                p.num_antennas.to_string(),
                fmt_f64(p.snr_db),
                p.frames.to_string(),
                p.otfs.bits.to_string(),
                p.otfs.bit_errors.to_string(),
                fmt_f64(p.otfs.ber()),
                fmt_f64(ol),
                fmt_f64(oh),
                fmt_f64(p.otfs.ser()),
                p.ofdm.bit_errors.to_string(),
                fmt_f64(p.ofdm.ber()),
                fmt_f64(fl),
                fmt_f64(fh),
                fmt_f64(p.ofdm.ser()),
                fmt_f64(p.mean_iterations),
                fmt_f64(p.mean_sparsity),
                p.otfs_significantly_better().to_string(),
            ]);
        }
        out
    }

    pub fn trial_table(&self) -> ExperimentOutput {
        trial_table("ber_trials", &self.trials)
    }
}

fn trial_table(name: &'static str, trials: &[TrialRecord]) -> ExperimentOutput {
    let mut out = ExperimentOutput::new(
        name,
        &[
            "trial_id",
            "n_r",
            "snr_db",
            "otfs_bit_errors",
            "otfs_symbol_errors",
            "ofdm_bit_errors",
            "ofdm_symbol_errors",
            "bits",
            "iterations",
            "sparsity",
        ],
    );
    for t in trials {
        let ofdm = t.ofdm.unwrap_or_default();
        out.push(vec![
            t.trial_id.to_string(),
            t.num_antennas.to_string(),
            fmt_f64(t.snr_db),
            t.otfs.bit_errors.to_string(),
            t.otfs.symbol_errors.to_string(),
            t.ofdm.map_or(String::new(), |_| ofdm.bit_errors.to_string()),
            t.ofdm.map_or(String::new(), |_| ofdm.symbol_errors.to_string()),
            t.otfs.bits.to_string(),
            t.iterations.to_string(),
            t.sparsity.to_string(),
        ]);
    }
    out
}

/// Paired OTFS / OFDM BER over `cfg.run.snr_db` for every array size in
/// `antennas`. Trial `t` at SNR index `s` draws from the same stream for
/// every array size, so channel geometries are shared across sizes.
pub fn run_ber_experiment(cfg: &SimConfig, antennas: &[usize]) -> Result<BerExperiment> {
    cfg.validate()?;
    let link = Link::from_config(cfg)?;
    let mut points = Vec::new();
    let mut all_trials = Vec::new();
    for &n_r in antennas {
        let chan_cfg = cfg.channel_config(n_r)?;
        let beam_count = cfg.beam_count(n_r);
        for (s, &snr_db) in cfg.run.snr_db.iter().enumerate() {
            let noise_variance = noise_variance_for_snr(snr_db, 1.0);
            let trials = run_indexed(cfg.run.threads, cfg.run.trials, |t| {
                let start = Instant::now();
                let stream = Stream::Ber.id(s, t);
                let mut rng = trial_rng(cfg.run.seed, stream);
                let draw = TrialDraw::draw(&mut rng, &chan_cfg, &link.params, link.constellation.len())?;
                let (det, sparsity) = link.otfs_trial(&draw, beam_count, noise_variance)?;
                let ofdm = link.ofdm_trial(&draw, noise_variance)?;
                Ok(TrialRecord {
                    trial_id: stream,
                    snr_db,
                    num_antennas: n_r,
                    otfs: ErrorCount::between(&link.constellation, &draw.symbols, &det.decisions),
                    ofdm: Some(ErrorCount::between(&link.constellation, &draw.symbols, &ofdm)),
                    iterations: det.iterations,
                    sparsity,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            })?;
            let mut otfs = ErrorCount::default();
            let mut ofdm = ErrorCount::default();
            for t in &trials {
                otfs.add(&t.otfs);
                ofdm.add(&t.ofdm.unwrap_or_default());
            }
            points.push(BerPoint {
                num_antennas: n_r,
                snr_db,
                frames: trials.len(),
                otfs,
                ofdm,
                mean_iterations: mean(trials.iter().map(|t| t.iterations as f64)),
                mean_sparsity: mean(trials.iter().map(|t| t.sparsity as f64)),
            });
            all_trials.extend(trials);
        }
    }
    Ok(BerExperiment {
        points,
        trials: all_trials,
    })
}

/// Per-branch nonzero statistics at one array size.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPoint {
    pub num_antennas: usize,
    pub branches: usize,
    pub trials: usize,
    /// Nonzero entries per branch, averaged over branches and trials.
    pub mean_nonzero_count: f64,
    pub min_nonzero_count: usize,
    pub max_nonzero_count: usize,
    pub mean_row_support: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityExperiment {
    pub threshold: f64,
    pub points: Vec<SparsityPoint>,
}

impl SparsityExperiment {
    pub fn summary(&self) -> ExperimentOutput {
        let mut out = ExperimentOutput::new(
            "sparsity",
            &[
                "n_r",
                "branches",
                "trials",
                "threshold",
                "mean_nonzero_per_branch",
                "min_nonzero_per_branch",
                "max_nonzero_per_branch",
                "mean_max_row_support",
            ],
        );
        for p in &self.points {
            out.push(vec![
                p.num_antennas.to_string(),
                p.branches.to_string(),
                p.trials.to_string(),
                fmt_f64(self.threshold),
                fmt_f64(p.mean_nonzero_count),
                p.min_nonzero_count.to_string(),
                p.max_nonzero_count.to_string(),
                fmt_f64(p.mean_row_support),
            ]);
        }
        out
    }
}

/// Nonzero counts of the effective channels in the sparsity scenario
/// (`N = M`, speed set by the normalized maximum Doppler offset). Trial `t`
/// uses the same geometry for every array size.
pub fn run_sparsity_experiment(cfg: &SimConfig, antennas: &[usize]) -> Result<SparsityExperiment> {
    cfg.validate()?;
    let scenario = cfg.sparsity_scenario();
    let link = Link::from_config(&scenario)?;
    let threshold = cfg.sparsity.threshold;
    let mut points = Vec::new();
    for &n_r in antennas {
        if n_r == 0 {
            return Err(Error::config("sparsity.antennas", "antenna counts must be positive"));
        }
        let chan_cfg = scenario.channel_config(n_r)?;
        let beam_count = scenario.beam_count(n_r);
        let per_trial = run_indexed(cfg.run.threads, cfg.sparsity.trials, |t| {
            let mut rng = trial_rng(cfg.run.seed, Stream::Sparsity.id(0, t));
            let chan = sample_geometry(&mut rng, &chan_cfg)?;
            let beams = make_beam_grid(chan.array(), beam_count, link.beam_mode, &chan)?;
            let mut counts = Vec::with_capacity(beams.len());
            let mut supports = Vec::with_capacity(beams.len());
            for w in beams.weights() {
                let h = branch_channel(&link.modem, &chan, &link.window, w)?;
                let report = sparsity_report(&[&h], threshold)?;
                counts.push(report.nonzero_counts[0]);
                supports.push(report.row_supports[0]);
            }
            Ok((counts, supports))
        })?;
        let counts: Vec<usize> = per_trial.iter().flat_map(|(c, _)| c.iter().copied()).collect();
        let supports = per_trial.iter().flat_map(|(_, s)| s.iter().map(|&v| v as f64));
        points.push(SparsityPoint {
            num_antennas: n_r,
            branches: beam_count,
            trials: cfg.sparsity.trials,
            mean_nonzero_count: mean(counts.iter().map(|&c| c as f64)),
            min_nonzero_count: counts.iter().copied().min().unwrap_or(0),
            max_nonzero_count: counts.iter().copied().max().unwrap_or(0),
            mean_row_support: mean(supports),
        });
    }
    Ok(SparsityExperiment { threshold, points })
}

/// Iteration statistics of the multi-branch and single-antenna receivers at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub snr_db: f64,
    pub frames: usize,
    pub num_antennas: usize,
    pub branches: usize,
    pub mp_mrc_mean_iterations: f64,
    pub mp_mean_iterations: f64,
    pub mp_mrc: ErrorCount,
    pub mp: ErrorCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceExperiment {
    pub points: Vec<ConvergencePoint>,
    /// Multi-branch trials followed by the paired single-antenna trials.
    pub trials: Vec<(TrialRecord, TrialRecord)>,
}

impl ConvergenceExperiment {
    pub fn summary(&self) -> ExperimentOutput {
        let mut out = ExperimentOutput::new(
            "convergence",
            &[
                "snr_db",
                "frames",
                "n_r",
                "branches",
                "mp_mrc_mean_iterations",
                "mp_mean_iterations",
                "mp_mrc_ber",
                "mp_ber",
            ],
        );
        for p in &self.points {
            out.push(vec![
                fmt_f64(p.snr_db),
                p.frames.to_string(),
                p.num_antennas.to_string(),
                p.branches.to_string(),
                fmt_f64(p.mp_mrc_mean_iterations),
                fmt_f64(p.mp_mean_iterations),
                fmt_f64(p.mp_mrc.ber()),
                fmt_f64(p.mp.ber()),
            ]);
        }
        out
    }

    pub fn trial_table(&self) -> ExperimentOutput {
        let flat: Vec<TrialRecord> = self.trials.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        trial_table("convergence_trials", &flat)
    }
}

/// Iterations to stop for MP-MRC with `cfg.array.antennas` antennas against
/// single-antenna MP. The single-antenna receiver sees antenna 0 of the same
/// channel and noise draw.
pub fn run_convergence_experiment(cfg: &SimConfig) -> Result<ConvergenceExperiment> {
    cfg.validate()?;
    let link = Link::from_config(cfg)?;
    let n_r = cfg.array.antennas;
    let chan_cfg = cfg.channel_config(n_r)?;
    let single_array = cfg.array_geometry(1)?;
    let beam_count = cfg.beam_count(n_r);
    let mut points = Vec::new();
    let mut all = Vec::new();
    for (s, &snr_db) in cfg.convergence.snr_db.iter().enumerate() {
        let noise_variance = noise_variance_for_snr(snr_db, 1.0);
        let trials = run_indexed(cfg.run.threads, cfg.convergence.trials, |t| {
            let stream = Stream::Convergence.id(s, t);
            let mut rng = trial_rng(cfg.run.seed, stream);
            let draw = TrialDraw::draw(&mut rng, &chan_cfg, &link.params, link.constellation.len())?;
            let start = Instant::now();
            let (multi, sparsity) = link.otfs_trial(&draw, beam_count, noise_variance)?;
            let multi_time = start.elapsed().as_secs_f64();
            let single_draw = TrialDraw {
                channel: draw.channel.with_array(single_array),
                symbols: draw.symbols.clone(),
                noise: draw.noise.slice(ndarray::s![.., 0..1]).to_owned(),
            };
            let start = Instant::now();
            let (single, single_sparsity) = link.otfs_trial(&single_draw, 1, noise_variance)?;
            let record = |det: &DetectionResult, antennas, sparsity, wall_time_s| TrialRecord {
                trial_id: stream,
                snr_db,
                num_antennas: antennas,
                otfs: ErrorCount::between(&link.constellation, &draw.symbols, &det.decisions),
                ofdm: None,
                iterations: det.iterations,
                sparsity,
                wall_time_s,
            };
            Ok((
                record(&multi, n_r, sparsity, multi_time),
                record(&single, 1, single_sparsity, start.elapsed().as_secs_f64()),
            ))
        })?;
        let mut mp_mrc = ErrorCount::default();
        let mut mp = ErrorCount::default();
        for (a, b) in &trials {
            mp_mrc.add(&a.otfs);
            mp.add(&b.otfs);
        }
        points.push(ConvergencePoint {
            snr_db,
            frames: trials.len(),
            num_antennas: n_r,
            branches: beam_count,
            mp_mrc_mean_iterations: mean(trials.iter().map(|(a, _)| a.iterations as f64)),
            mp_mean_iterations: mean(trials.iter().map(|(_, b)| b.iterations as f64)),
            mp_mrc,
            mp,
        });
        all.extend(trials);
    }
    Ok(ConvergenceExperiment { points, trials: all })
}
