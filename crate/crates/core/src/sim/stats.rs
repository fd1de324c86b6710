use statrs::distribution::{Beta, ContinuousCDF};

/// Exact (Clopper-Pearson) two-sided binomial confidence interval for
/// `errors` successes out of `trials`. Zero trials give `[0, 1]`.
pub fn clopper_pearson(errors: u64, trials: u64, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let alpha = 1.0 - confidence;
    let (k, n) = (errors as f64, trials as f64);
    let lower = if errors == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(alpha / 2.0)
    };
    let upper = if errors >= trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).unwrap().inverse_cdf(1.0 - alpha / 2.0)
    };
    (lower, upper)
}

/// `errors / trials`, or 0 when nothing was counted.
pub fn rate(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        0.0
    } else {
        errors as f64 / trials as f64
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// First SNR at which the piecewise log-linear BER curve reaches `target`.
/// Points must be sorted by SNR; zero BERs are treated as below any target.
pub fn snr_at_ber(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    let log = |b: f64| if b > 0.0 { b.log10() } else { f64::NEG_INFINITY };
    let goal = log(target);
    let (first_snr, first_ber) = *curve.first()?;
    if log(first_ber) <= goal {
        return Some(first_snr);
    }
    for pair in curve.windows(2) {
        let ((s0, b0), (s1, b1)) = (pair[0], pair[1]);
        let (l0, l1) = (log(b0), log(b1));
        if l1 <= goal {
            if !l1.is_finite() {
                return Some(s1);
            }
            return Some(s0 + (s1 - s0) * (l0 - goal) / (l0 - l1));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_reference_values() {
        // closed forms at the edges: (alpha/2)^(1/n) and 1 - (alpha/2)^(1/n)
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(10, 10, 0.95);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
        // n = 1, k = 0 gives [0, 0.975]
        assert!((clopper_pearson(0, 1, 0.95).1 - 0.975).abs() < 1e-9);
        assert_eq!(clopper_pearson(0, 0, 0.95), (0.0, 1.0));
    }

    #[test]
    fn interval_contains_estimate() {
        for (k, n) in [(1, 100), (50, 100), (3, 1_000_000), (999, 1000)] {
            let (lo, hi) = clopper_pearson(k, n, 0.95);
            let p = rate(k, n);
            assert!(lo < p && p < hi, "{k}/{n}: {lo} {p} {hi}");
        }
    }

    #[test]
    fn interpolated_crossing() {
        let curve = [(0.0, 1e-1), (5.0, 1e-3)];
        assert!((snr_at_ber(&curve, 1e-2).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(snr_at_ber(&curve, 1e-4), None);
        assert_eq!(snr_at_ber(&[(3.0, 1e-3)], 1e-2), Some(3.0));
        assert_eq!(snr_at_ber(&[(0.0, 0.2), (2.0, 0.0)], 1e-2), Some(2.0));
        assert_eq!(rate(0, 0), 0.0);
        assert_eq!(mean(Vec::<f64>::new()), 0.0);
    }
}
