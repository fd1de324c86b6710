use num_complex::Complex64;

use super::mp::VARIANCE_FLOOR;
use super::Constellation;
use crate::beamformer::BranchObservation;
use crate::error::{Error, Result};

/// Largest number of candidate frames the exhaustive search will visit.
pub const MAP_CANDIDATE_LIMIT: usize = 1 << 20;

/// Exhaustive joint MAP decision: minimizes `sum_p |y_p - H_p x|^2 / sigma_p^2`
/// over every constellation-valued `x`. Ties keep the first candidate in
/// odometer order.
pub fn map_oracle(branches: &[BranchObservation], constellation: &Constellation) -> Result<Vec<usize>> {
    let first = branches
        .first()
        .ok_or_else(|| Error::config("beams.count", "at least one branch is required"))?;
    let nodes = first.y().len();
    for b in branches {
        Error::check_len("branch frame length", nodes, b.y().len())?;
    }
    let q = constellation.len();
    if q == 0 {
        return Err(Error::config("modulation", "constellation is empty"));
    }
    let candidates = (q as f64).powi(nodes as i32);
    if candidates > MAP_CANDIDATE_LIMIT as f64 {
        return Err(Error::TooLarge {
            candidates,
            limit: MAP_CANDIDATE_LIMIT,
        });
    }

    let points = constellation.points();
    let weights: Vec<f64> = branches
        .iter()
        .map(|b| 1.0 / b.noise_variance().max(VARIANCE_FLOOR))
        .collect();
    let mut digits = vec![0usize; nodes];
    // residuals y_p - H_p x for the current candidate
    let mut residuals: Vec<Vec<Complex64>> = branches
        .iter()
        .map(|b| {
            let h = b.h();
            b.y()
                .as_slice()
                .iter()
                .enumerate()
                .map(|(d, &y)| y - h.row(d).iter().map(|v| v * points[0]).sum::<Complex64>())
                .collect()
        })
        .collect();
    let metric = |res: &[Vec<Complex64>]| -> f64 {
        res.iter()
            .zip(&weights)
            .map(|(r, w)| w * r.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    };

    let mut best_metric = metric(&residuals);
    let mut best = digits.clone();
    loop {
        // odometer increment; every changed digit updates the residuals by one column
        let mut pos = 0;
        while pos < nodes {
            let old = points[digits[pos]];
            digits[pos] = (digits[pos] + 1) % q;
            let delta = points[digits[pos]] - old;
            for (b, r) in branches.iter().zip(residuals.iter_mut()) {
                for (rd, h) in r.iter_mut().zip(b.h().column(pos)) {
                    *rd -= h * delta;
                }
            }
            if digits[pos] != 0 {
                break;
            }
            pos += 1;
        }
        if pos == nodes {
            break;
        }
        let m = metric(&residuals);
        if m < best_metric {
            best_metric = m;
            best.copy_from_slice(&digits);
        }
    }
    Ok(best)
}
