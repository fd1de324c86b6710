use ndarray::Array2;
use num_complex::Complex64;
use otfs_core::beamformer::BranchObservation;
use otfs_core::detector::mp::{obs_to_var, var_to_obs};
use otfs_core::detector::{
    branch_posterior, detect_mp_mrc, detect_mp_mrc_from, Constellation, DetectorConfig, FactorGraph, PmfState,
    StopReason,
};
use otfs_core::modem::{DelayDopplerFrame, FrameParams};
use otfs_core::sim::{map_agreement, map_scenario, run_convergence_experiment, Link, SimConfig, TrialDraw};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `m x n` grid whose channel keeps each entry with probability `density`.
fn random_branch(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64, noise: f64) -> BranchObservation {
    let params = FrameParams::new(m, n, 0, 15e3).unwrap();
    let nodes = params.grid_len();
    let h = Array2::from_shape_fn((nodes, nodes), |_| {
        if rng.random_bool(density) {
            gaussian(rng) * 0.5
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let y = (0..nodes).map(|_| gaussian(rng)).collect();
    BranchObservation::new(0.0, DelayDopplerFrame::new(y, &params).unwrap(), h, noise, 1e-5).unwrap()
}

/// Direct evaluation of the damped extrinsic update: for edge `e` of column
/// `c`, `p_new(a) = damping * nmlz(prod_{t != e} exp(-|r_t - h_t a|^2 / v_t)) + (1 - damping) * p_old(a)`,
/// and the node posterior is the same product over every edge.
fn check_update_against_direct_formula(constellation: &Constellation, seed: u64) {
    let damping = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = [random_branch(&mut rng, 4, 2, 0.5, 0.3)];
    let graph = FactorGraph::new(&obs).unwrap();
    let mut state = PmfState::uniform(&graph, constellation);
    // one full update so that the old pmfs are no longer uniform
    obs_to_var(&graph, &mut state, 0, constellation);
    var_to_obs(&graph, &mut state, 0, constellation, damping);
    obs_to_var(&graph, &mut state, 0, constellation);
    let before = state.clone();
    var_to_obs(&graph, &mut state, 0, constellation, damping);

    let support = graph.support(0);
    let y = obs[0].y().as_slice();
    let points = constellation.points();
    let q = points.len();
    let msgs = before.branch(0);
    let loglik = |e: usize, a: Complex64| {
        let r = y[support.edge_row(e)] - msgs.mean[e];
        -(r - support.value(e) * a).norm_sqr() / msgs.variance[e]
    };
    let softmax = |logs: Vec<f64>| {
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    for c in 0..support.num_cols() {
        let edges: Vec<usize> = support.col_edges(c).collect();
        for &e in &edges {
            let ext = softmax(
                points
                    .iter()
                    .map(|&a| edges.iter().filter(|&&t| t != e).map(|&t| loglik(t, a)).sum())
                    .collect(),
            );
            for (j, &p_ext) in ext.iter().enumerate() {
                let expected = damping * p_ext + (1.0 - damping) * before.edge_pmf(0, e)[j];
                let got = state.edge_pmf(0, e)[j];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "column {c} edge {e} symbol {j}: {got} vs {expected}"
                );
            }
        }
        if !edges.is_empty() {
            let post = softmax(
                points
                    .iter()
                    .map(|&a| edges.iter().map(|&t| loglik(t, a)).sum())
                    .collect(),
            );
            let got = branch_posterior(&state, 0, c);
            for j in 0..q {
                assert!((got[j] - post[j]).abs() < 1e-12, "posterior of node {c}");
            }
        }
    }
}

#[test]
fn square_qam_update_matches_direct_formula() {
    for seed in 0..4 {
        check_update_against_direct_formula(&Constellation::qam16(), seed);
        check_update_against_direct_formula(&Constellation::qpsk(), seed);
    }
}

#[test]
fn psk_update_matches_direct_formula() {
    for seed in 0..4 {
        check_update_against_direct_formula(&Constellation::psk(8).unwrap(), seed);
        check_update_against_direct_formula(&Constellation::bpsk(), seed);
    }
}

#[test]
fn noise_free_truth_is_a_fixed_point() {
    let c = Constellation::qam16();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = FrameParams::new(8, 4, 0, 15e3).unwrap();
    let nodes = params.grid_len();
    let truth: Vec<usize> = (0..nodes).map(|_| rng.random_range(0..16)).collect();
    let x: Vec<Complex64> = truth.iter().map(|&s| c.point(s)).collect();
    let branches: Vec<BranchObservation> = (0..2)
        .map(|_| {
            // unit-scale entries on a banded pattern keep every support exact
            let h = Array2::from_shape_fn((nodes, nodes), |(d, e)| {
                if (e + nodes - d) % nodes < 3 {
                    Complex64::from_polar(1.0, rng.random_range(0.0..6.0))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let y: Vec<Complex64> = h
                .rows()
                .into_iter()
                .map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            BranchObservation::new(0.0, DelayDopplerFrame::new(y, &params).unwrap(), h, 0.0, 1e-5).unwrap()
        })
        .collect();
    let graph = FactorGraph::new(&branches).unwrap();
    let init = PmfState::point_mass(&graph, &c, &truth).unwrap();
    let res = detect_mp_mrc_from(&branches, &c, &DetectorConfig::default(), init).unwrap();
    assert_eq!(res.decisions, truth);
    assert_eq!(res.stop_reason, StopReason::Converged);
    assert_eq!(res.iterations, 1);
}

#[test]
fn decisions_come_from_the_best_indicator() {
    let c = Constellation::qpsk();
    let cfg = DetectorConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let branches: Vec<_> = (0..2).map(|_| random_branch(&mut rng, 4, 4, 0.3, 0.2)).collect();
        let res = detect_mp_mrc(&branches, &c, &cfg).unwrap();
        let trace = &res.indicator_trace;
        assert_eq!(trace.len(), res.iterations);
        assert!(trace.iter().all(|v| (0.0..=1.0).contains(v)));
        let best = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // ties move the decision point forward, so the best iteration is the last maximum
        let last_max = trace.iter().rposition(|&v| v == best).unwrap() + 1;
        assert_eq!(res.best_iteration, last_max);
        if res.best_iteration == res.iterations {
            let argmax: Vec<usize> = res
                .njp
                .chunks_exact(c.len())
                .map(|p| (0..p.len()).fold(0, |b, j| if p[j] > p[b] { j } else { b }))
                .collect();
            assert_eq!(res.decisions, argmax);
        }
        let last = *trace.last().unwrap();
        match res.stop_reason {
            StopReason::Converged => assert_eq!(last, 1.0),
            StopReason::Diverged => assert!(last < best - cfg.backtrack_slack),
            StopReason::MaxIterations => assert_eq!(res.iterations, cfg.max_iterations),
        }
    }
}

#[test]
fn undamped_single_branch_agrees_with_map() {
    let mut cfg = map_scenario();
    cfg.array.antennas = 1;
    cfg.detector.damping = 1.0;
    let (matched, total) = map_agreement(&cfg, 20.0, 100, 7).unwrap();
    assert_eq!(total, 400);
    assert!(matched as f64 >= 0.95 * total as f64, "{matched}/{total}");
}

#[test]
fn raising_the_iteration_cap_keeps_early_stops() {
    let mut cfg = SimConfig::default();
    cfg.frame.m = 16;
    cfg.frame.n = 8;
    cfg.array.antennas = 4;
    let link = Link::from_config(&cfg).unwrap();
    let chan_cfg = cfg.channel_config(4).unwrap();
    let short = DetectorConfig {
        max_iterations: 12,
        ..cfg.detector
    };
    let long = DetectorConfig {
        max_iterations: 30,
        ..cfg.detector
    };
    let mut early = 0;
    for t in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let draw = TrialDraw::draw(&mut rng, &chan_cfg, &link.params, 16).unwrap();
        let snr_db = 18.0 + t as f64;
        let branches = link.otfs_branches(&draw, 4, 10f64.powf(-snr_db / 10.0)).unwrap();
        let a = detect_mp_mrc(&branches, &link.constellation, &short).unwrap();
        if a.stop_reason != StopReason::MaxIterations {
            early += 1;
            let b = detect_mp_mrc(&branches, &link.constellation, &long).unwrap();
            assert_eq!(a, b);
        }
    }
    assert!(early > 0, "no trial stopped before the cap");
}

#[test]
fn multi_antenna_beats_single_antenna_at_high_snr() {
    let mut cfg = SimConfig::default();
    cfg.convergence.snr_db = vec![25.0];
    cfg.convergence.trials = 200;
    let exp = run_convergence_experiment(&cfg).unwrap();
    let p = &exp.points[0];
    assert!(
        p.mp_mrc.ser() < p.mp.ser(),
        "SER with N_r = 8: {:.3e}, N_r = 1: {:.3e}",
        p.mp_mrc.ser(),
        p.mp.ser()
    );
}
