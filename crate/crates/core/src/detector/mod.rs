//! Symbol detectors: joint MP-MRC, exhaustive MAP and OFDM MMSE-MRC.

mod constellation;
mod map;
mod mmse;
pub mod mp;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use constellation::Constellation;
pub use map::{map_oracle, MAP_CANDIDATE_LIMIT};
pub use mmse::{midpoint_frequency_response, mmse_mrc_ofdm};
pub use mp::{branch_posterior, convergence_indicator, njp_combine, FactorGraph, PmfState};

use crate::beamformer::{BranchObservation, DEFAULT_SUPPORT_THRESHOLD};
use crate::error::{Error, Result};

/// Tuning of the MP-MRC iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Weight of the fresh pmf in the damped update, in `(0, 1]`.
    pub damping: f64,
    /// A node counts as converged when its largest NJP entry is `>= 1 - indicator_slack`.
    pub indicator_slack: f64,
    /// Stop once the indicator falls this far below its best value.
    pub backtrack_slack: f64,
    pub max_iterations: usize,
    /// Channel entries with smaller modulus are not factor-graph edges.
    pub support_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            indicator_slack: 0.01,
            backtrack_slack: 0.2,
            max_iterations: 30,
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("detector.damping", "must lie in (0, 1]"));
        }
        if !(self.indicator_slack > 0.0 && self.indicator_slack < 1.0) {
            return Err(Error::config("detector.indicator_slack", "must lie in (0, 1)"));
        }
        if !(self.backtrack_slack >= 0.0) {
            return Err(Error::config("detector.backtrack_slack", "must be non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("detector.max_iterations", "must be at least 1"));
        }
        if !(self.support_threshold > 0.0) {
            return Err(Error::config("detector.support_threshold", "must be positive"));
        }
        Ok(())
    }
}

/// Why the iterations ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Diverged,
    MaxIterations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::Diverged => "diverged",
            StopReason::MaxIterations => "max_iterations",
        })
    }
}

/// Output of one MP-MRC run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Constellation index per delay-Doppler node, taken at `best_iteration`.
    pub decisions: Vec<usize>,
    /// NJP of the last iteration, `Q` entries per node.
    pub njp: Vec<f64>,
    pub iterations: usize,
    pub indicator_trace: Vec<f64>,
    pub ops_per_iteration: Vec<u64>,
    /// One-based iteration whose decisions are returned.
    pub best_iteration: usize,
    pub stop_reason: StopReason,
    /// Messages or posteriors that fell back to uniform.
    pub fallbacks: u64,
}

impl DetectionResult {
    /// CSV row `frame,iterations,best_iteration,stop_reason,fallbacks,ops_total,indicator_trace`
    /// with the trace `;`-separated.
    pub fn write_diagnostics<W: Write>(&self, frame: usize, out: &mut W) -> std::io::Result<()> {
        let trace: Vec<String> = self.indicator_trace.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(
            out,
            "{frame},{},{},{},{},{},{}",
            self.iterations,
            self.best_iteration,
            self.stop_reason,
            self.fallbacks,
            self.ops_per_iteration.iter().sum::<u64>(),
            trace.join(";")
        )
    }

    pub const DIAGNOSTICS_HEADER: &'static str =
        "frame,iterations,best_iteration,stop_reason,fallbacks,ops_total,indicator_trace";
}

/// Joint MP-MRC detection from uniform initial pmfs.
pub fn detect_mp_mrc(
    branches: &[BranchObservation],
    constellation: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    let graph = FactorGraph::new(branches)?;
    let state = PmfState::uniform(&graph, constellation);
    run(&graph, state, constellation, cfg)
}

/// Joint MP-MRC detection starting from the given variable-to-observation pmfs.
pub fn detect_mp_mrc_from(
    branches: &[BranchObservation],
    constellation: &Constellation,
    cfg: &DetectorConfig,
    initial: PmfState,
) -> Result<DetectionResult> {
    let graph = FactorGraph::new(branches)?;
    if initial.alphabet_size() != constellation.len() {
        return Err(Error::DimensionMismatch {
            context: "initial pmf alphabet",
            expected: constellation.len(),
            actual: initial.alphabet_size(),
        });
    }
    let mut initial = initial;
    // the state may have been built for a different alphabet of the same size
    initial.refresh_moments(constellation);
    run(&graph, initial, constellation, cfg)
}

fn run(
    graph: &FactorGraph<'_>,
    mut state: PmfState,
    constellation: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    cfg.validate()?;
    if constellation.is_empty() {
        return Err(Error::config("modulation", "constellation is empty"));
    }
    let q = constellation.len();
    let nodes = graph.num_nodes();
    let mut njp = vec![0.0; nodes * q];
    let mut decisions = vec![0usize; nodes];
    let mut best = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut trace = Vec::new();
    let mut ops_trace = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        let mut ops = 0;
        for p in 0..graph.num_branches() {
            ops += mp::obs_to_var(graph, &mut state, p, constellation);
        }
        for p in 0..graph.num_branches() {
            ops += mp::var_to_obs(graph, &mut state, p, constellation, cfg.damping);
        }
        let (njp_ops, fallbacks) = mp::njp_table(&state, &mut njp);
        state.fallbacks += fallbacks;
        ops += njp_ops;
        ops_trace.push(ops);

        let indicator = convergence_indicator(&njp, q, cfg.indicator_slack);
        trace.push(indicator);
        if indicator >= best {
            best = indicator;
            best_iteration = iteration;
            for (d, pmf) in decisions.iter_mut().zip(njp.chunks_exact(q)) {
                *d = argmax(pmf);
            }
        }
        if indicator >= 1.0 {
            stop_reason = StopReason::Converged;
            break;
        }
        if indicator < best - cfg.backtrack_slack {
            stop_reason = StopReason::Diverged;
            break;
        }
    }

    Ok(DetectionResult {
        decisions,
        njp,
        iterations: trace.len(),
        indicator_trace: trace,
        ops_per_iteration: ops_trace,
        best_iteration,
        stop_reason,
        fallbacks: state.fallbacks,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
