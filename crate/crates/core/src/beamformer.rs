//! Matched-filter beamforming network and per-branch delay-Doppler channels.
//!
//! Branch `p` combines the antennas with `w(theta_p) = a(theta_p) / N_r`,
//! is OTFS-demodulated on its own, and sees the effective channel
//! `y_p = H(theta_p) x + z_p`. [`effective_dd_channel`] builds `H` by
//! pushing every delay-Doppler basis frame through the noise-free pipeline;
//! [`structured_dd_channel`] assembles the same matrix from the tap gains
//! directly and is checked against the probe.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_tap_gains, steering_vector, ArrayGeometry, GeometricChannel};
use crate::error::{Error, Result};
use crate::modem::{DelayDopplerFrame, FrameParams, Modem, WindowPair};

/// Modulus cutoff below which channel entries count as zero.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-5;

/// `w(theta) = a(theta) / N_r`.
pub fn mf_weights(array: &ArrayGeometry, theta: f64) -> Vec<Complex64> {
    let scale = 1.0 / array.num_antennas() as f64;
    steering_vector(array, theta).into_iter().map(|z| z * scale).collect()
}

/// How beam directions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamMode {
    /// `sin(theta_p) = -1 + (2p + 1) / P`; orthogonal beams when `P = N_r`.
    UniformSine,
    /// Cluster the true arrival angles into `P` groups (1-D k-means on `sin(theta)`).
    KnownAoa,
}

impl std::str::FromStr for BeamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-sine" => Ok(BeamMode::UniformSine),
            "known-aoa" => Ok(BeamMode::KnownAoa),
            other => Err(Error::config(
                "beams.mode",
                format!("unknown mode `{other}` (expected uniform-sine or known-aoa)"),
            )),
        }
    }
}

impl std::fmt::Display for BeamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BeamMode::UniformSine => "uniform-sine",
            BeamMode::KnownAoa => "known-aoa",
        })
    }
}

/// Directions and MF weights of the `P` branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamGrid {
    directions: Vec<f64>,
    weights: Vec<Vec<Complex64>>,
}

impl BeamGrid {
    pub fn from_directions(array: &ArrayGeometry, directions: Vec<f64>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::config("beams.count", "must be at least 1"));
        }
        let weights = directions.iter().map(|&t| mf_weights(array, t)).collect();
        Ok(Self { directions, weights })
    }

    pub fn uniform_sine(array: &ArrayGeometry, count: usize) -> Result<Self> {
        let directions = (0..count)
            .map(|p| (-1.0 + (2 * p + 1) as f64 / count as f64).asin())
            .collect();
        Self::from_directions(array, directions)
    }

    pub fn known_aoa(array: &ArrayGeometry, count: usize, chan: &GeometricChannel) -> Result<Self> {
        let sines: Vec<f64> = chan.paths().map(|p| p.aoa_rad.sin()).collect();
        let centroids = kmeans_1d(&sines, count)?;
        Self::from_directions(array, centroids.into_iter().map(f64::asin).collect())
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn weights(&self) -> &[Vec<Complex64>] {
        &self.weights
    }
}

/// Builds the beam grid for `mode`; `chan` supplies the angles in known-AoA mode.
pub fn make_beam_grid(
    array: &ArrayGeometry,
    count: usize,
    mode: BeamMode,
    chan: &GeometricChannel,
) -> Result<BeamGrid> {
    match mode {
        BeamMode::UniformSine => BeamGrid::uniform_sine(array, count),
        BeamMode::KnownAoa => BeamGrid::known_aoa(array, count, chan),
    }
}

/// Lloyd's algorithm in one dimension with quantile initialisation.
fn kmeans_1d(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::config("beams.count", "must be at least 1"));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::NotEnoughDirections {
            requested: k,
            available: distinct.len(),
        });
    }
    let mut centroids: Vec<f64> = (0..k)
        .map(|j| distinct[((2 * j + 1) * distinct.len()) / (2 * k)])
        .collect();
    let mut assignment = vec![usize::MAX; values.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (slot, &v) in assignment.iter_mut().zip(values) {
            let best = centroids
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(j, _)| j)
                .unwrap();
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            let (sum, cnt) = assignment
                .iter()
                .zip(values)
                .filter(|(&a, _)| a == j)
                .fold((0.0, 0usize), |(s, n), (_, &v)| (s + v, n + 1));
            if cnt > 0 {
                *c = sum / cnt as f64;
            }
        }
    }
    Ok(centroids)
}

/// `r(theta_p) = R w*(theta_p)`.
pub fn apply_beamformer(received: &Array2<Complex64>, weights: &[Complex64]) -> Result<Vec<Complex64>> {
    Error::check_len("apply_beamformer", received.ncols(), weights.len())?;
    Ok(received
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(weights).map(|(r, w)| r * w.conj()).sum())
        .collect())
}

/// Probe-built effective channels for several beams at once.
///
/// Column `k` of each matrix is the noise-free branch output for the
/// basis frame `e_k`.
pub fn effective_dd_channels(
    modem: &Modem,
    chan: &GeometricChannel,
    window: &WindowPair,
    beams: &[Vec<Complex64>],
) -> Result<Vec<Array2<Complex64>>> {
    let params = modem.params();
    let mn = params.grid_len();
    for w in beams {
        Error::check_len("effective_dd_channel", chan.array().num_antennas(), w.len())?;
    }
    let gains = chan.tap_gains(params.frame_len());
    let mut out = vec![Array2::zeros((mn, mn)); beams.len()];
    let mut probe = DelayDopplerFrame::zeros(params);
    for k in 0..mn {
        probe.as_mut_slice()[k] = Complex64::new(1.0, 0.0);
        let s = modem.otfs_modulate(&probe, window)?;
        probe.as_mut_slice()[k] = Complex64::new(0.0, 0.0);
        let received = apply_tap_gains(&gains, &s);
        for (h, w) in out.iter_mut().zip(beams) {
            let y = modem.otfs_demodulate(&apply_beamformer(&received, w)?, window)?;
            h.column_mut(k)
                .iter_mut()
                .zip(y.as_slice())
                .for_each(|(dst, src)| *dst = *src);
        }
    }
    Ok(out)
}

/// Probe-built `H(theta_p)` for one branch.
pub fn effective_dd_channel(
    modem: &Modem,
    chan: &GeometricChannel,
    window: &WindowPair,
    weights: &[Complex64],
) -> Result<Array2<Complex64>> {
    Ok(
        effective_dd_channels(modem, chan, window, std::slice::from_ref(&weights.to_vec()))?
            .pop()
            .unwrap(),
    )
}

/// Closed-form `H(theta_p)` for rectangular windows and `d_i <= N_cp`.
///
/// With `g_i(t)` the beamformed tap gain and `t_n = n (M + N_cp) + N_cp`,
/// `H[(m, k'), ((m - d_i) mod M, k)] = (1/N) sum_n g_i(t_n + m) e^{-j 2 pi n (k' - k) / N}`.
pub fn structured_dd_channel(
    params: &FrameParams,
    chan: &GeometricChannel,
    weights: &[Complex64],
) -> Result<Array2<Complex64>> {
    Error::check_len("structured_dd_channel", chan.array().num_antennas(), weights.len())?;
    if chan.max_delay() > params.cp_len() {
        return Err(Error::config(
            "frame.cp",
            format!(
                "cyclic prefix {} shorter than channel delay {}",
                params.cp_len(),
                chan.max_delay()
            ),
        ));
    }
    let (m, n, cp, block) = (params.m(), params.n(), params.cp_len(), params.block_len());
    let mn = params.grid_len();
    let gains = chan.tap_gains(params.frame_len());
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut h = Array2::zeros((mn, mn));
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for (i, &d) in gains.delays().iter().enumerate() {
        for row_delay in 0..m {
            for (sym, slot) in spectrum.iter_mut().enumerate() {
                let t = sym * block + cp + row_delay;
                *slot = weights
                    .iter()
                    .enumerate()
                    .map(|(a, w)| w.conj() * gains.get(t, a, i))
                    .sum::<Complex64>()
                    / n as f64;
            }
            fft.process(&mut spectrum);
            let col_delay = (row_delay + m - d % m) % m;
            for k_out in 0..n {
                for k_in in 0..n {
                    let kappa = (k_out + n - k_in) % n;
                    h[[row_delay + m * k_out, col_delay + m * k_in]] += spectrum[kappa];
                }
            }
        }
    }
    Ok(h)
}

/// Structured construction when it applies, probing otherwise.
pub fn branch_channel(
    modem: &Modem,
    chan: &GeometricChannel,
    window: &WindowPair,
    weights: &[Complex64],
) -> Result<Array2<Complex64>> {
    if window.is_identity() && chan.max_delay() <= modem.params().cp_len() {
        structured_dd_channel(modem.params(), chan, weights)
    } else {
        effective_dd_channel(modem, chan, window, weights)
    }
}

/// Above-threshold entries of `H`, numbered column by column so that the
/// edges of each column are contiguous, plus a per-row edge index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSupport {
    col_ptr: Vec<usize>,
    edge_rows: Vec<usize>,
    edge_cols: Vec<usize>,
    values: Vec<Complex64>,
    row_ptr: Vec<usize>,
    row_edges: Vec<usize>,
}

impl SparseSupport {
    pub fn from_dense(h: &Array2<Complex64>, threshold: f64) -> Self {
        let (nrows, ncols) = h.dim();
        let mut triplets = Vec::new();
        for (c, col) in h.columns().into_iter().enumerate() {
            for (r, z) in col.iter().enumerate() {
                if z.norm() >= threshold {
                    triplets.push((r, c, *z));
                }
            }
        }
        Self::from_sorted(triplets, nrows, ncols)
    }

    /// Builds from explicit rows of `(column, value)` pairs.
    pub fn from_rows(rows: &[Vec<(usize, Complex64)>], ncols: usize) -> Self {
        let mut triplets: Vec<(usize, usize, Complex64)> = rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
            .collect();
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        Self::from_sorted(triplets, rows.len(), ncols)
    }

    /// `triplets` are `(row, col, value)` sorted by column, then row.
    fn from_sorted(triplets: Vec<(usize, usize, Complex64)>, nrows: usize, ncols: usize) -> Self {
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(r, c, _) in &triplets {
            col_ptr[c + 1] += 1;
            row_ptr[r + 1] += 1;
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut fill = row_ptr.clone();
        let mut row_edges = vec![0usize; triplets.len()];
        for (edge, &(r, _, _)) in triplets.iter().enumerate() {
            row_edges[fill[r]] = edge;
            fill[r] += 1;
        }
        Self {
            col_ptr,
            edge_rows: triplets.iter().map(|t| t.0).collect(),
            edge_cols: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
            row_ptr,
            row_edges,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.values.len()
    }

    /// Edges landing in row `d`, in increasing column order.
    #[inline]
    pub fn row_edges(&self, row: usize) -> &[usize] {
        &self.row_edges[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    /// Edge range of column `c`, in increasing row order.
    #[inline]
    pub fn col_edges(&self, col: usize) -> std::ops::Range<usize> {
        self.col_ptr[col]..self.col_ptr[col + 1]
    }

    #[inline]
    pub fn edge_row(&self, edge: usize) -> usize {
        self.edge_rows[edge]
    }

    #[inline]
    pub fn col(&self, edge: usize) -> usize {
        self.edge_cols[edge]
    }

    #[inline]
    pub fn value(&self, edge: usize) -> Complex64 {
        self.values[edge]
    }

    /// Row index of every edge, in edge order.
    #[inline]
    pub fn rows(&self) -> &[usize] {
        &self.edge_rows
    }

    /// Channel value of every edge, in edge order.
    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `Phi(d)`: column indices in row `d`.
    pub fn row_support(&self, row: usize) -> Vec<usize> {
        self.row_edges(row).iter().map(|&e| self.edge_cols[e]).collect()
    }

    /// `Psi(c)`: row indices in column `c`.
    pub fn col_support(&self, col: usize) -> &[usize] {
        &self.edge_rows[self.col_edges(col)]
    }

    pub fn max_row_support(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn max_col_support(&self) -> usize {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

/// One branch's received frame, effective channel and noise level.
#[derive(Debug, Clone)]
pub struct BranchObservation {
    direction: f64,
    y: DelayDopplerFrame,
    h: Array2<Complex64>,
    noise_variance: f64,
    support: SparseSupport,
}

impl BranchObservation {
    pub fn new(
        direction: f64,
        y: DelayDopplerFrame,
        h: Array2<Complex64>,
        noise_variance: f64,
        threshold: f64,
    ) -> Result<Self> {
        Error::check_len("BranchObservation rows", y.len(), h.nrows())?;
        Error::check_len("BranchObservation cols", y.len(), h.ncols())?;
        if !(noise_variance >= 0.0) {
            return Err(Error::config("noise_variance", "must be non-negative"));
        }
        if !(threshold > 0.0) {
            return Err(Error::config("detector.support_threshold", "must be positive"));
        }
        let support = SparseSupport::from_dense(&h, threshold);
        Ok(Self {
            direction,
            y,
            h,
            noise_variance,
            support,
        })
    }

    pub fn direction(&self) -> f64 {
        self.direction
    }

    pub fn y(&self) -> &DelayDopplerFrame {
        &self.y
    }

    pub fn h(&self) -> &Array2<Complex64> {
        &self.h
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn support(&self) -> &SparseSupport {
        &self.support
    }

    /// Branch sparsity `S`: the largest row support.
    pub fn sparsity(&self) -> usize {
        self.support.max_row_support()
    }
}

/// Non-zero entry counts per branch at a modulus threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub threshold: f64,
    pub nonzero_counts: Vec<usize>,
    pub row_supports: Vec<usize>,
}

impl SparsityReport {
    /// Largest row support over all branches.
    pub fn max_row_support(&self) -> usize {
        self.row_supports.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_nonzero_count(&self) -> f64 {
        if self.nonzero_counts.is_empty() {
            return 0.0;
        }
        self.nonzero_counts.iter().sum::<usize>() as f64 / self.nonzero_counts.len() as f64
    }

    /// CSV rows `n_r,branch,nonzero_count,max_row_support`.
    pub fn write_csv<W: Write>(&self, num_antennas: usize, header: bool, out: &mut W) -> std::io::Result<()> {
        if header {
            writeln!(out, "n_r,branch,nonzero_count,max_row_support")?;
        }
        for (p, (count, s)) in self.nonzero_counts.iter().zip(&self.row_supports).enumerate() {
            writeln!(out, "{num_antennas},{p},{count},{s}")?;
        }
        Ok(())
    }
}

/// Counts entries with modulus `>= threshold` in each matrix.
pub fn sparsity_report(channels: &[&Array2<Complex64>], threshold: f64) -> Result<SparsityReport> {
    if !(threshold > 0.0) {
        return Err(Error::config("threshold", "must be positive"));
    }
    let mut nonzero_counts = Vec::with_capacity(channels.len());
    let mut row_supports = Vec::with_capacity(channels.len());
    for h in channels {
        let mut total = 0;
        let mut widest = 0;
        for row in h.rows() {
            let count = row.iter().filter(|z| z.norm() >= threshold).count();
            total += count;
            widest = widest.max(count);
        }
        nonzero_counts.push(total);
        row_supports.push(widest);
    }
    Ok(SparsityReport {
        threshold,
        nonzero_counts,
        row_supports,
    })
}
