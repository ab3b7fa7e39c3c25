//! Diversity of init-time streams against the analytic covariance recursion,
//! and the decay of the layerwise-linearization residual with depth.

use diagnostics::{feature_diversity_exponent, linearization_residual, pow2_eps_grid};
use entrywise_optim::UpdateRule;
use ndarray::Array2;
use parametrization::{Parametrization, WidthExponents};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use resnet_sim::wide::{WideConfig, WideNet};
use resnet_sim::{forward, init, train_step, Batch, Loss, NetConfig, Phi, Placement, Targets};

fn depth_mup(eta: f64) -> Parametrization {
    Parametrization {
        alpha: 0.5,
        gamma: 0.5,
        delta: 0.5,
        width: WidthExponents::mup(),
        a: 1.0,
        eta,
        base_depth: 1,
    }
}

/// At init the stream increments are independent across layers, so the
/// distance curve is a square root in eps. The covariance recursion gives
/// the exact finite-n curve: S(l+1) = S(l)(1 + kappa/L) per coordinate with
/// kappa = (n-1)/n from mean subtraction, and
/// d(eps)^2 = S(anchor)((1 + kappa/L)^{eps L} - 1).
#[test]
fn init_stream_diversity_matches_covariance_recursion() {
    let n = 8192;
    let depth = 256;
    let cfg = WideConfig {
        n,
        l: depth,
        phi: Phi::Identity,
        mean_subtraction: true,
        keep_stream_snapshots: true,
    };
    let p = depth_mup(0.1);
    let mut net = WideNet::lazy(&cfg, &p, 0xd1f)
        .expect("config is valid");
    net.train_step(1.0, 0.3).unwrap();

    let layers: Vec<Array2<f64>> = net.stream_snapshots[0]
        .iter()
        .map(|v| Array2::from_shape_vec((n, 1), v.clone()).expect("snapshot is n long"))
        .collect();
    assert_eq!(layers.len(), depth + 1);

    let lambda = 0.25;
    let eps = pow2_eps_grid(depth, 7);
    let report = feature_diversity_exponent(&layers, lambda, &eps).unwrap();
    assert_eq!(report.dropped_points, 0);

    // Pointwise check against the recursion, anchored on the realized
    // anchor norm so only increment noise remains.
    let anchor = report.anchor_layer;
    let s_anchor =
        layers[anchor].iter().map(|v| v * v).sum::<f64>() / n as f64;
    let kappa = (n as f64 - 1.0) / n as f64;
    let growth = 1.0 + kappa / depth as f64;
    let mut oracle_pairs = Vec::new();
    for (&e, (&layer, &d)) in
        report.eps_grid.iter().zip(report.layer_indices.iter().zip(&report.d_curve))
    {
        let m = (layer - anchor) as f64;
        let d_oracle = (s_anchor * (growth.powf(m) - 1.0)).sqrt();
        let rel = (d / d_oracle - 1.0).abs();
        println!("eps {e:.6}: d {d:.6e} oracle {d_oracle:.6e} rel {rel:.4}");
        assert!(rel < 0.08, "eps {e}: rel {rel}");
        oracle_pairs.push((e, d_oracle));
    }

    // The measured exponent must match the oracle's own fitted exponent and
    // sit near 1/2.
    let oracle_fit = diagnostics::fit_power_law(&oracle_pairs).unwrap();
    println!(
        "measured exponent {:.4}, oracle exponent {:.4}",
        report.fitted_exponent, oracle_fit.exponent
    );
    assert!((report.fitted_exponent - oracle_fit.exponent).abs() < 0.03);
    assert!((report.fitted_exponent - 0.5).abs() < 0.05);

    // Same snapshots, same report.
    let again = feature_diversity_exponent(&layers, lambda, &eps).unwrap();
    assert_eq!(again.fitted_exponent.to_bits(), report.fitted_exponent.to_bits());
    assert_eq!(again.d_curve, report.d_curve);
}

/// Exercises the dense-cache path acceptance uses: layer snapshots straight
/// from a forward pass. At init the exponent sits near 1/2 for relu too.
#[test]
fn dense_forward_cache_feeds_diversity() {
    let cfg = NetConfig {
        d_in: 6,
        d_out: 3,
        n: 512,
        l: 64,
        k: 1,
        phi: Phi::Relu,
        placement: Placement::Post,
        mean_subtraction: true,
        pre_layernorm: false,
        train_io: true,
        loss: Loss::Squared,
    };
    let p = depth_mup(0.05);
    let rule = UpdateRule::adam();
    let state = init(&cfg, &rule, 21).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let inputs = Array2::from_shape_fn((cfg.d_in, 8), |_| rng.sample::<f64, _>(StandardNormal));
    let cache = forward(&state, &p, &inputs).unwrap();

    let report =
        feature_diversity_exponent(&cache.xs, 0.25, &pow2_eps_grid(cfg.l, 5)).unwrap();
    println!("relu init exponent {:.4}", report.fitted_exponent);
    assert!((report.fitted_exponent - 0.5).abs() < 0.15, "{}", report.fitted_exponent);
}

/// After a fixed training budget the relu residual shrinks faster than 1/L:
/// weight motion per block thins out as depth grows, so ever fewer
/// preactivations cross the kink.
#[test]
fn relu_linearization_residual_decays_superlinearly() {
    let p = depth_mup(0.05);
    let rule = UpdateRule::adam();
    let depths = [16usize, 32, 64, 128];
    let seeds = [11u64, 12, 13];
    let steps = 12;

    let mut pairs = Vec::new();
    for &l in &depths {
        let cfg = NetConfig {
            d_in: 8,
            d_out: 4,
            n: 128,
            l,
            k: 1,
            phi: Phi::Relu,
            placement: Placement::Post,
            mean_subtraction: true,
            pre_layernorm: false,
            train_io: true,
            loss: Loss::Squared,
        };
        let mut mean = 0.0;
        for &seed in &seeds {
            let start = init(&cfg, &rule, seed).unwrap();
            let mut state = start.clone();
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabc);
            let inputs =
                Array2::from_shape_fn((cfg.d_in, 8), |_| rng.sample::<f64, _>(StandardNormal));
            let targets =
                Array2::from_shape_fn((cfg.d_out, 8), |_| rng.sample::<f64, _>(StandardNormal));
            let batch =
                Batch { inputs: inputs.clone(), targets: Targets::Regression(targets) };
            for _ in 0..steps {
                train_step(&mut state, &p, &rule, &batch).unwrap();
            }
            mean += linearization_residual(&state, &start, &p, &inputs, l / 2).unwrap();
        }
        mean /= seeds.len() as f64;
        println!("depth {l}: residual {mean:.6e}");
        pairs.push((l as f64, mean));
    }

    let fit = diagnostics::fit_power_law(&pairs).unwrap();
    println!("residual exponent {:.4} (r2 {:.4})", fit.exponent, fit.r2);
    assert!(fit.exponent < -1.0, "exponent {}", fit.exponent);
    assert!(fit.exponent > -2.0, "exponent {}", fit.exponent);
}
