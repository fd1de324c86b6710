//! Message updates of the joint MP-MRC detector.
//!
//! Every branch owns its own factor graph: observation node `d` connects to
//! the variable nodes in the support of row `d` of `H(theta_p)`. An edge
//! `(d, e)` carries two messages: the Gaussian interference approximation
//! (mean, variance) from `d` to `e`, and the symbol pmf from `e` to `d`.
//! Edges are numbered column by column as in [`SparseSupport`].

use num_complex::Complex64;

use crate::beamformer::{BranchObservation, SparseSupport};
use crate::detector::Constellation;
use crate::error::{Error, Result};

/// Lower clamp on interference-plus-noise variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// The per-branch factor graphs of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FactorGraph<'a> {
    branches: &'a [BranchObservation],
    num_nodes: usize,
}

impl<'a> FactorGraph<'a> {
    pub fn new(branches: &'a [BranchObservation]) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| Error::config("beams.count", "at least one branch is required"))?;
        let num_nodes = first.y().len();
        for b in branches {
            Error::check_len("branch frame length", num_nodes, b.y().len())?;
        }
        Ok(Self { branches, num_nodes })
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    /// `MN`, the number of variable (and observation) nodes per branch.
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn branch(&self, p: usize) -> &'a BranchObservation {
        &self.branches[p]
    }

    pub fn support(&self, p: usize) -> &'a SparseSupport {
        self.branches[p].support()
    }
}

/// Messages of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMessages {
    /// `p_{e,d}(a_j)` per edge, `Q` entries each.
    pub pmf: Vec<f64>,
    /// `E[a]` under each edge pmf; kept equal to the pmf's first moment.
    pub symbol_mean: Vec<Complex64>,
    /// `E[|a|^2]` under each edge pmf.
    pub symbol_energy: Vec<f64>,
    /// Interference mean `mu_{d,e}` per edge.
    pub mean: Vec<Complex64>,
    /// Interference-plus-noise variance per edge.
    pub variance: Vec<f64>,
    /// Unnormalized log posterior of every variable node (`Q` entries each, max 0).
    pub log_posterior: Vec<f64>,
}

/// All pmf tables driving the iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfState {
    q: usize,
    branches: Vec<BranchMessages>,
    /// Edges or nodes that fell back to a uniform pmf.
    pub fallbacks: u64,
}

impl PmfState {
    /// `p = 1/|A|` on every edge.
    pub fn uniform(graph: &FactorGraph<'_>, constellation: &Constellation) -> Self {
        let q = constellation.len();
        let branches = (0..graph.num_branches())
            .map(|p| {
                let edges = graph.support(p).num_edges();
                BranchMessages {
                    pmf: vec![1.0 / q as f64; edges * q],
                    symbol_mean: vec![Complex64::new(0.0, 0.0); edges],
                    symbol_energy: vec![0.0; edges],
                    mean: vec![Complex64::new(0.0, 0.0); edges],
                    variance: vec![0.0; edges],
                    log_posterior: vec![0.0; graph.num_nodes() * q],
                }
            })
            .collect();
        let mut state = Self {
            q,
            branches,
            fallbacks: 0,
        };
        state.refresh_moments(constellation);
        state
    }

    /// Every edge leaving variable `c` carries a point mass on `symbols[c]`.
    pub fn point_mass(graph: &FactorGraph<'_>, constellation: &Constellation, symbols: &[usize]) -> Result<Self> {
        Error::check_len("point_mass symbols", graph.num_nodes(), symbols.len())?;
        let q = constellation.len();
        let mut state = Self::uniform(graph, constellation);
        for (p, msgs) in state.branches.iter_mut().enumerate() {
            let support = graph.support(p);
            msgs.pmf.iter_mut().for_each(|v| *v = 0.0);
            for edge in 0..support.num_edges() {
                msgs.pmf[edge * q + symbols[support.col(edge)]] = 1.0;
            }
        }
        state.refresh_moments(constellation);
        Ok(state)
    }

    /// Recomputes every edge's symbol mean and energy from its pmf for
    /// `constellation`; the updates keep them in sync afterwards.
    pub(crate) fn refresh_moments(&mut self, constellation: &Constellation) {
        let points = constellation.points();
        for msgs in &mut self.branches {
            for ((pmf, m1), m2) in msgs
                .pmf
                .chunks_exact(self.q)
                .zip(msgs.symbol_mean.iter_mut())
                .zip(msgs.symbol_energy.iter_mut())
            {
                *m1 = pmf.iter().zip(points).map(|(p, a)| a * *p).sum();
                *m2 = pmf.iter().zip(points).map(|(p, a)| p * a.norm_sqr()).sum();
            }
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.q
    }

    pub fn branch(&self, p: usize) -> &BranchMessages {
        &self.branches[p]
    }

    /// pmf sent from variable `col(edge)` to observation `row(edge)` on branch `p`.
    pub fn edge_pmf(&self, p: usize, edge: usize) -> &[f64] {
        &self.branches[p].pmf[edge * self.q..(edge + 1) * self.q]
    }
}

/// Observation-to-variable update on branch `p`: interference mean and
/// variance for every edge, excluding the edge's own variable.
///
/// Returns the number of per-symbol operations performed.
pub fn obs_to_var(graph: &FactorGraph<'_>, state: &mut PmfState, p: usize, constellation: &Constellation) -> u64 {
    let q = state.q;
    debug_assert_eq!(q, constellation.len());
    let support = graph.support(p);
    let values = support.values();
    let noise = graph.branch(p).noise_variance();
    let msgs = &mut state.branches[p];

    // per-edge contribution h E[a] and its variance |h|^2 (E|a|^2 - |E a|^2),
    // summed per row; the row totals stay cache resident
    let rows = support.rows();
    let mut row_mean = vec![Complex64::new(0.0, 0.0); support.num_rows()];
    let mut row_var = vec![0.0; support.num_rows()];
    for (e, ((m1, m2), h)) in msgs.symbol_mean.iter().zip(&msgs.symbol_energy).zip(values).enumerate() {
        let mh = m1 * h;
        let vh = m2 * h.norm_sqr() - mh.norm_sqr();
        msgs.mean[e] = mh;
        msgs.variance[e] = vh;
        row_mean[rows[e]] += mh;
        row_var[rows[e]] += vh;
    }
    for ((mean, var), &d) in msgs.mean.iter_mut().zip(msgs.variance.iter_mut()).zip(rows) {
        *mean = row_mean[d] - *mean;
        *var = (row_var[d] - *var).max(0.0) + noise;
    }
    (support.num_edges() * q) as u64
}

/// `2^(j/64)` for `j = 0..64`, correctly rounded.
const EXP2_SIXTY_FOURTHS: [u64; 64] = [
    0x3ff0000000000000,
    0x3ff02c9a3e778061,
    0x3ff059b0d3158574,
    0x3ff0874518759bc8,
    0x3ff0b5586cf9890f,
    0x3ff0e3ec32d3d1a2,
    0x3ff11301d0125b51,
    0x3ff1429aaea92de0,
    0x3ff172b83c7d517b,
    0x3ff1a35beb6fcb75,
    0x3ff1d4873168b9aa,
    0x3ff2063b88628cd6,
    0x3ff2387a6e756238,
    0x3ff26b4565e27cdd,
    0x3ff29e9df51fdee1,
    0x3ff2d285a6e4030b,
    0x3ff306fe0a31b715,
    0x3ff33c08b26416ff,
    0x3ff371a7373aa9cb,
    0x3ff3a7db34e59ff7,
    0x3ff3dea64c123422,
    0x3ff4160a21f72e2a,
    0x3ff44e086061892d,
    0x3ff486a2b5c13cd0,
    0x3ff4bfdad5362a27,
    0x3ff4f9b2769d2ca7,
    0x3ff5342b569d4f82,
    0x3ff56f4736b527da,
    0x3ff5ab07dd485429,
    0x3ff5e76f15ad2148,
    0x3ff6247eb03a5585,
    0x3ff6623882552225,
    0x3ff6a09e667f3bcd,
    0x3ff6dfb23c651a2f,
    0x3ff71f75e8ec5f74,
    0x3ff75feb564267c9,
    0x3ff7a11473eb0187,
    0x3ff7e2f336cf4e62,
    0x3ff82589994cce13,
    0x3ff868d99b4492ed,
    0x3ff8ace5422aa0db,
    0x3ff8f1ae99157736,
    0x3ff93737b0cdc5e5,
    0x3ff97d829fde4e50,
    0x3ff9c49182a3f090,
    0x3ffa0c667b5de565,
    0x3ffa5503b23e255d,
    0x3ffa9e6b5579fdbf,
    0x3ffae89f995ad3ad,
    0x3ffb33a2b84f15fb,
    0x3ffb7f76f2fb5e47,
    0x3ffbcc1e904bc1d2,
    0x3ffc199bdd85529c,
    0x3ffc67f12e57d14b,
    0x3ffcb720dcef9069,
    0x3ffd072d4a07897c,
    0x3ffd5818dcfba487,
    0x3ffda9e603db3285,
    0x3ffdfc97337b9b5f,
    0x3ffe502ee78b3ff6,
    0x3ffea4afa2a490da,
    0x3ffefa1bee615a27,
    0x3fff50765b6e4540,
    0x3fffa7c1819e90d8,
];

/// `exp(x)` for `x <= 0` to within a few ulp. Arguments below -708 give 0.
///
/// `x = (64 m + j) ln2/64 + r` with `|r| <= ln2/128`, so
/// `exp(x) = 2^m 2^(j/64) exp(r)` and a degree-5 polynomial covers `exp(r)`
/// to below 1e-16 relative.
#[inline(always)]
#[allow(clippy::excessive_precision)]
fn exp_nonpositive(x: f64) -> f64 {
    // 1.5 * 2^52: adding it rounds to an integer kept in the low mantissa bits
    const ROUND: f64 = 6_755_399_441_055_744.0;
    const INV_STEP: f64 = 64.0 * std::f64::consts::LOG2_E;
    // ln2/64 split so that `n * STEP_HI` is exact for |n| < 2^21
    const STEP_HI: f64 = 6.931_471_803_691_238_164_9e-1 / 64.0;
    const STEP_LO: f64 = 1.908_214_929_270_587_700_02e-10 / 64.0;
    let clamped = x.max(-708.0);
    let t = clamped * INV_STEP + ROUND;
    let n = t - ROUND;
    let index = (t.to_bits() as i64).wrapping_sub(ROUND.to_bits() as i64);
    let r = (clamped - n * STEP_HI) - n * STEP_LO;
    let poly = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0)))));
    let scale = f64::from_bits((((index >> 6) + 1023) as u64) << 52);
    let value = f64::from_bits(EXP2_SIXTY_FOURTHS[(index & 63) as usize]) * poly * scale;
    if x < -708.0 {
        0.0
    } else {
        value
    }
}

/// `out = exp(v - max v) / sum`. Returns false when the result is not a valid pmf.
#[inline]
fn softmax_into(values: &[f64], out: &mut [f64]) -> bool {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    for (o, &v) in out.iter_mut().zip(values) {
        *o = exp_nonpositive(v - max);
    }
    normalize(out)
}

/// Scales `out` to unit sum. Returns false when that is impossible.
#[inline]
fn normalize(out: &mut [f64]) -> bool {
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return false;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|o| *o *= inv);
    true
}

/// Row-wise extrinsic pmfs: row `k` of `out` is the softmax of
/// `total - own[k]`, with the exponentials taken in one pass. Rows that
/// cannot be normalized become uniform and their indices go to `failed`.
fn extrinsic_rows(total: &[f64], own: &[f64], out: &mut [f64], failed: &mut Vec<usize>) {
    let width = total.len();
    for (o_row, own_row) in out.chunks_exact_mut(width).zip(own.chunks_exact(width)) {
        let mut max = f64::NEG_INFINITY;
        for ((o, t), l) in o_row.iter_mut().zip(total).zip(own_row) {
            *o = t - l;
            max = max.max(*o);
        }
        o_row.iter_mut().for_each(|o| *o -= max);
    }
    out.iter_mut().for_each(|o| *o = exp_nonpositive(*o));
    failed.clear();
    for (k, o_row) in out.chunks_exact_mut(width).enumerate() {
        if !normalize(o_row) {
            uniform(o_row);
            failed.push(k);
        }
    }
}

#[inline]
fn uniform(out: &mut [f64]) {
    let v = 1.0 / out.len() as f64;
    out.iter_mut().for_each(|o| *o = v);
}

/// Subtracts the maximum of `values` in place and adds them into `total`.
#[inline]
fn shift_and_accumulate(values: &mut [f64], total: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (t, v) in total.iter_mut().zip(values.iter_mut()) {
        *v -= max;
        *t += *v;
    }
}

/// Writes `total - max(total)` into `out`.
#[inline]
fn normalized_log(total: &[f64], out: &mut [f64]) {
    let max = total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, t) in out.iter_mut().zip(total) {
        *o = t - max;
    }
}

/// Variable-to-observation update on branch `p` with damping `damping`.
///
/// For every variable `c` the Gaussian log-likelihoods of all its edges are
/// formed (max-subtracted per edge), their sum becomes the branch log
/// posterior, and the extrinsic pmf of edge `e` excludes `e`'s own term.
/// On a square QAM grid the log-likelihood splits into an in-phase and a
/// quadrature term, so both products are formed per axis.
/// Returns the number of per-symbol operations performed.
pub fn var_to_obs(
    graph: &FactorGraph<'_>,
    state: &mut PmfState,
    p: usize,
    constellation: &Constellation,
    damping: f64,
) -> u64 {
    let q = state.q;
    let support = graph.support(p);
    let y = graph.branch(p).y().as_slice();
    let rows = support.rows();
    let values = support.values();
    let widest = support.max_col_support();
    let msgs = &mut state.branches[p];
    let mut fallbacks = 0u64;

    // residual y_d - mu_{d,e}, channel value and inverse variance of an edge
    let edge_terms = |e: usize| {
        let r = y[rows[e]] - msgs.mean[e];
        (r, values[e], 1.0 / msgs.variance[e].max(VARIANCE_FLOOR))
    };

    match constellation.square_levels() {
        Some(levels) => {
            let side = levels.len();
            let mut ll_i = vec![0.0; widest * side];
            let mut ll_q = vec![0.0; widest * side];
            let mut ext_i = vec![0.0; widest * side];
            let mut ext_q = vec![0.0; widest * side];
            let (mut tot_i, mut tot_q) = (vec![0.0; side], vec![0.0; side]);
            let mut failed = Vec::new();
            for c in 0..support.num_cols() {
                let edges = support.col_edges(c);
                let width = edges.len() * side;
                if width == 0 {
                    msgs.log_posterior[c * q..(c + 1) * q].iter_mut().for_each(|v| *v = 0.0);
                    fallbacks += 1;
                    continue;
                }
                tot_i.iter_mut().for_each(|t| *t = 0.0);
                tot_q.iter_mut().for_each(|t| *t = 0.0);
                for (k, e) in edges.clone().enumerate() {
                    let (r, h, inv_var) = edge_terms(e);
                    // -|r - h a|^2 / v = (2 Re(r h^*) a_i - |h|^2 a_i^2 + (same for a_q) - |r|^2) / v
                    let u = r * h.conj();
                    let g = h.norm_sqr();
                    let li = &mut ll_i[k * side..(k + 1) * side];
                    let lq = &mut ll_q[k * side..(k + 1) * side];
                    for ((a, vi), vq) in levels.iter().zip(li.iter_mut()).zip(lq.iter_mut()) {
                        let energy = g * a * a;
                        *vi = (2.0 * u.re * a - energy) * inv_var;
                        *vq = (2.0 * u.im * a - energy) * inv_var;
                    }
                    shift_and_accumulate(li, &mut tot_i);
                    shift_and_accumulate(lq, &mut tot_q);
                }
                let max_i = tot_i.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let max_q = tot_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (post_row, ti) in msgs.log_posterior[c * q..(c + 1) * q]
                    .chunks_exact_mut(side)
                    .zip(&tot_i)
                {
                    for (dst, tq) in post_row.iter_mut().zip(&tot_q) {
                        *dst = (ti - max_i) + (tq - max_q);
                    }
                }
                extrinsic_rows(&tot_i, &ll_i[..width], &mut ext_i[..width], &mut failed);
                fallbacks += failed.len() as u64;
                extrinsic_rows(&tot_q, &ll_q[..width], &mut ext_q[..width], &mut failed);
                fallbacks += failed.len() as u64;
                let pmfs = &mut msgs.pmf[edges.start * q..edges.end * q];
                for (k, (pmf, (pi, pq))) in pmfs
                    .chunks_exact_mut(q)
                    .zip(ext_i.chunks_exact(side).zip(ext_q.chunks_exact(side)))
                    .enumerate()
                {
                    for (row, a) in pmf.chunks_exact_mut(side).zip(pi) {
                        for (old, b) in row.iter_mut().zip(pq) {
                            *old = damping * (a * b) + (1.0 - damping) * *old;
                        }
                    }
                    // moments of a product pmf split per axis; damping is linear in the pmf
                    let (mut mi, mut mq, mut energy) = (0.0, 0.0, 0.0);
                    for ((lv, a), b) in levels.iter().zip(pi).zip(pq) {
                        mi += a * lv;
                        mq += b * lv;
                        energy += (a + b) * lv * lv;
                    }
                    let e = edges.start + k;
                    msgs.symbol_mean[e] = Complex64::new(mi, mq) * damping + msgs.symbol_mean[e] * (1.0 - damping);
                    msgs.symbol_energy[e] = damping * energy + (1.0 - damping) * msgs.symbol_energy[e];
                }
            }
        }
        None => {
            let points = constellation.points();
            let mut loglik = vec![0.0; widest * q];
            let mut fresh = vec![0.0; widest * q];
            let mut total = vec![0.0; q];
            let mut failed = Vec::new();
            for c in 0..support.num_cols() {
                let edges = support.col_edges(c);
                let width = edges.len() * q;
                if width == 0 {
                    msgs.log_posterior[c * q..(c + 1) * q].iter_mut().for_each(|v| *v = 0.0);
                    fallbacks += 1;
                    continue;
                }
                total.iter_mut().for_each(|t| *t = 0.0);
                for (k, e) in edges.clone().enumerate() {
                    let (r, h, inv_var) = edge_terms(e);
                    let ll = &mut loglik[k * q..(k + 1) * q];
                    for (v, a) in ll.iter_mut().zip(points) {
                        *v = -(r - h * a).norm_sqr() * inv_var;
                    }
                    shift_and_accumulate(ll, &mut total);
                }
                normalized_log(&total, &mut msgs.log_posterior[c * q..(c + 1) * q]);
                extrinsic_rows(&total, &loglik[..width], &mut fresh[..width], &mut failed);
                fallbacks += failed.len() as u64;
                let pmfs = &mut msgs.pmf[edges.start * q..edges.end * q];
                for (old, new) in pmfs.iter_mut().zip(&fresh[..width]) {
                    *old = damping * new + (1.0 - damping) * *old;
                }
                for (e, pmf) in edges.clone().zip(pmfs.chunks_exact(q)) {
                    msgs.symbol_mean[e] = pmf.iter().zip(points).map(|(p, a)| a * *p).sum();
                    msgs.symbol_energy[e] = pmf.iter().zip(points).map(|(p, a)| p * a.norm_sqr()).sum();
                }
            }
        }
    }
    state.fallbacks += fallbacks;
    // one likelihood and one message entry per edge and symbol
    (2 * support.num_edges() * q) as u64
}

/// Normalized posterior of node `c` on branch `p`: the product over all of
/// the node's observation neighbours.
pub fn branch_posterior(state: &PmfState, p: usize, c: usize) -> Vec<f64> {
    let q = state.q;
    let logs = &state.branches[p].log_posterior[c * q..(c + 1) * q];
    let mut out = vec![0.0; q];
    if !softmax_into(logs, &mut out) {
        out.iter_mut().for_each(|v| *v = 1.0 / q as f64);
    }
    out
}

/// Normalized joint probability: elementwise product of the branch
/// posteriors, normalized, accumulated in the log domain.
pub fn njp_combine(posteriors: &[&[f64]]) -> Vec<f64> {
    let q = posteriors.first().map_or(0, |p| p.len());
    let mut logs = vec![0.0; q];
    for post in posteriors {
        for (l, &v) in logs.iter_mut().zip(post.iter()) {
            *l += v.ln();
        }
    }
    let mut out = vec![0.0; q];
    if !softmax_into(&logs, &mut out) {
        out.iter_mut().for_each(|v| *v = 1.0 / q as f64);
    }
    out
}

/// NJP table for all nodes from the branch log posteriors, written into `njp`.
/// Returns (per-symbol operations, uniform fallbacks).
pub(crate) fn njp_table(state: &PmfState, njp: &mut [f64]) -> (u64, u64) {
    let q = state.q;
    let mut logs = vec![0.0; q];
    let mut ops = 0;
    let mut fallbacks = 0;
    for (c, out) in njp.chunks_exact_mut(q).enumerate() {
        logs.iter_mut().for_each(|l| *l = 0.0);
        for msgs in &state.branches {
            for (l, v) in logs.iter_mut().zip(&msgs.log_posterior[c * q..(c + 1) * q]) {
                *l += v;
            }
            ops += q as u64;
        }
        if !softmax_into(&logs, out) {
            out.iter_mut().for_each(|v| *v = 1.0 / q as f64);
            fallbacks += 1;
        }
    }
    (ops, fallbacks)
}

/// Fraction of nodes whose largest NJP entry is at least `1 - slack`.
pub fn convergence_indicator(njp: &[f64], q: usize, slack: f64) -> f64 {
    let nodes = njp.len() / q;
    if nodes == 0 {
        return 0.0;
    }
    let converged = njp
        .chunks_exact(q)
        .filter(|pmf| pmf.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= 1.0 - slack)
        .count();
    converged as f64 / nodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{DelayDopplerFrame, FrameParams};
    use ndarray::Array2;

    fn branch(h: Array2<Complex64>, y: Vec<Complex64>, noise: f64) -> BranchObservation {
        let n = y.len();
        let params = FrameParams::new(n / 2, 2, 0, 15e3).unwrap();
        BranchObservation::new(0.0, DelayDopplerFrame::new(y, &params).unwrap(), h, noise, 1e-5).unwrap()
    }

    fn diag(values: &[f64]) -> Array2<Complex64> {
        let n = values.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(if i == j { values[i] } else { 0.0 }, 0.0)
        })
    }

    #[test]
    fn isolated_rows_see_only_noise() {
        let c = Constellation::qpsk();
        let obs = [branch(
            diag(&[1.0, 0.5, 2.0, 1.0]),
            vec![Complex64::new(0.3, 0.0); 4],
            0.25,
        )];
        let graph = FactorGraph::new(&obs).unwrap();
        let mut state = PmfState::uniform(&graph, &c);
        obs_to_var(&graph, &mut state, 0, &c);
        let msgs = state.branch(0);
        assert!(msgs.mean.iter().all(|m| m.norm() == 0.0));
        assert!(msgs.variance.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn uniform_prior_interference_statistics() {
        let c = Constellation::qam16();
        let h = Array2::from_shape_fn((4, 4), |(i, j)| {
            Complex64::new(0.1 * (i + 1) as f64, 0.2 * j as f64 - 0.3)
        });
        let obs = [branch(h.clone(), vec![Complex64::new(0.0, 0.0); 4], 0.05)];
        let graph = FactorGraph::new(&obs).unwrap();
        let mut state = PmfState::uniform(&graph, &c);
        obs_to_var(&graph, &mut state, 0, &c);
        let support = graph.support(0);
        for e in 0..support.num_edges() {
            let d = support.edge_row(e);
            let own = support.col(e);
            let expected: f64 = (0..4).filter(|&t| t != own).map(|t| h[[d, t]].norm_sqr()).sum::<f64>() + 0.05;
            assert!(state.branch(0).mean[e].norm() < 1e-15);
            assert!((state.branch(0).variance[e] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn undamped_update_and_single_edge_columns() {
        let c = Constellation::qpsk();
        let obs = [branch(diag(&[1.0; 4]), c.points().to_vec(), 0.1)];
        let graph = FactorGraph::new(&obs).unwrap();

        // a single-edge column has an empty extrinsic product -> uniform p~
        let mut state = PmfState::point_mass(&graph, &c, &[0, 1, 2, 3]).unwrap();
        obs_to_var(&graph, &mut state, 0, &c);
        var_to_obs(&graph, &mut state, 0, &c, 0.3);
        for e in 0..4 {
            let pmf = state.edge_pmf(0, e);
            for (j, &v) in pmf.iter().enumerate() {
                let prev = if j == e { 1.0 } else { 0.0 };
                assert!((v - (0.3 / 4.0 + 0.7 * prev)).abs() < 1e-15);
            }
        }

        let mut state = PmfState::uniform(&graph, &c);
        obs_to_var(&graph, &mut state, 0, &c);
        var_to_obs(&graph, &mut state, 0, &c, 1.0);
        assert!(state.branch(0).pmf.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn noise_free_diagonal_posterior_is_point_mass() {
        let c = Constellation::qam16();
        let sent = [3usize, 9, 14, 0, 7, 7];
        let gains = [1.0, 0.4, 2.0, 0.8, 1.3, 0.05];
        let y: Vec<Complex64> = sent.iter().zip(&gains).map(|(&s, g)| c.point(s) * *g).collect();
        let obs = [branch(diag(&gains), y, 0.0)];
        let graph = FactorGraph::new(&obs).unwrap();
        let mut state = PmfState::uniform(&graph, &c);
        obs_to_var(&graph, &mut state, 0, &c);
        var_to_obs(&graph, &mut state, 0, &c, 0.5);
        for (node, &s) in sent.iter().enumerate() {
            let post = branch_posterior(&state, 0, node);
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(post[s] >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn empty_columns_fall_back_to_uniform() {
        let c = Constellation::qpsk();
        let obs = [branch(
            diag(&[1.0, 0.0, 1.0, 1.0]),
            vec![Complex64::new(0.7, 0.7); 4],
            0.1,
        )];
        let graph = FactorGraph::new(&obs).unwrap();
        let mut state = PmfState::uniform(&graph, &c);
        obs_to_var(&graph, &mut state, 0, &c);
        var_to_obs(&graph, &mut state, 0, &c, 0.5);
        assert_eq!(state.fallbacks, 1);
        assert_eq!(branch_posterior(&state, 0, 1), vec![0.25; 4]);
    }

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = -(i as f64) * 3.54e-3 - (i % 7) as f64 * 1e-9;
            let rel = (exp_nonpositive(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(exp_nonpositive(-709.0), 0.0);
        assert_eq!(exp_nonpositive(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn njp_examples() {
        let a = [0.8, 0.2];
        let b = [0.5, 0.5];
        let njp = njp_combine(&[&a, &b]);
        assert!((njp[0] - 0.8).abs() < 1e-12 && (njp[1] - 0.2).abs() < 1e-12);
        assert_eq!(njp_combine(&[&[0.1, 0.6, 0.3]]).len(), 3);
        let single = njp_combine(&[&[0.1, 0.6, 0.3]]);
        assert!((single[1] - 0.6).abs() < 1e-12);
        let point = [0.0, 1.0, 0.0];
        assert_eq!(njp_combine(&[&point, &point]), vec![0.0, 1.0, 0.0]);
        // disjoint point masses have an all-zero product
        assert_eq!(njp_combine(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![0.5, 0.5]);
    }

    #[test]
    fn indicator_examples() {
        let q = 16;
        let mut point = vec![0.0; q];
        point[3] = 1.0;
        let uniform = vec![1.0 / q as f64; q];
        let all_point: Vec<f64> = (0..10).flat_map(|_| point.clone()).collect();
        assert_eq!(convergence_indicator(&all_point, q, 0.01), 1.0);
        let all_uniform: Vec<f64> = (0..10).flat_map(|_| uniform.clone()).collect();
        assert_eq!(convergence_indicator(&all_uniform, q, 0.01), 0.0);
        let half: Vec<f64> = (0..10)
            .flat_map(|i| if i % 2 == 0 { point.clone() } else { uniform.clone() })
            .collect();
        assert_eq!(convergence_indicator(&half, q, 0.01), 0.5);
    }

    #[test]
    fn inconsistent_branches_rejected() {
        let a = branch(diag(&[1.0; 4]), vec![Complex64::new(0.0, 0.0); 4], 0.1);
        let b = branch(diag(&[1.0; 6]), vec![Complex64::new(0.0, 0.0); 6], 0.1);
        assert!(FactorGraph::new(&[a, b]).is_err());
        assert!(FactorGraph::new(&[]).is_err());
    }
}
