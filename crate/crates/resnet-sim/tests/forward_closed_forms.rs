//! Hand-computable forward and single-step cases.

use approx::assert_relative_eq;
use ndarray::{arr2, Array2};

fn assert_arrays_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
    }
}
use parametrization::{Parametrization, WidthExponents};
use entrywise_optim::UpdateRule;
use resnet_sim::{forward, init, train_step, Batch, Loss, NetConfig, Phi, Placement, Targets};

fn param(alpha: f64, gamma: f64, delta: f64, a: f64, eta: f64, base_depth: u32) -> Parametrization {
    Parametrization { alpha, gamma, delta, width: WidthExponents::mup(), a, eta, base_depth }
}

fn base_cfg() -> NetConfig {
    NetConfig {
        d_in: 2,
        d_out: 2,
        n: 6,
        l: 3,
        k: 1,
        phi: Phi::Identity,
        placement: Placement::Post,
        mean_subtraction: false,
        pre_layernorm: false,
        train_io: true,
        loss: Loss::Squared,
    }
}

#[test]
fn zero_blocks_pass_input_through() {
    let cfg = base_cfg();
    let p = param(0.5, 0.5, 0.5, 1.0, 0.1, 1);
    let mut state = init(&cfg, &UpdateRule::sgd(), 3).unwrap();
    for block in &mut state.w {
        for w in block {
            w.fill(0.0);
        }
    }
    let xi = arr2(&[[0.7, -0.2], [1.1, 0.4]]);
    let cache = forward(&state, &p, &xi).unwrap();
    let expected0 = state.u.dot(&xi);
    for l in 0..=cfg.l {
        assert_arrays_close(&cache.xs[l], &expected0, 1e-14);
    }
    assert_arrays_close(&cache.f, &state.v.t().dot(&expected0), 1e-14);
}

#[test]
fn linear_stack_matches_matrix_product() {
    let mut cfg = base_cfg();
    // L = L0 = 4 so the branch multiplier is exactly `a`.
    cfg.l = 4;
    let p = param(0.5, 0.5, 0.5, 1.7, 0.1, 4);
    let state = init(&cfg, &UpdateRule::sgd(), 9).unwrap();
    let xi = arr2(&[[0.3], [-0.9]]);
    let cache = forward(&state, &p, &xi).unwrap();
    // x^l = (I + a W_l) ... (I + a W_1) U xi for the linear stack.
    let mut x = state.u.dot(&xi);
    for l in 0..4 {
        x = &x + &(state.w[l][0].dot(&x) * 1.7);
    }
    assert_arrays_close(&cache.xs[4], &x, 1e-12);
    assert_arrays_close(&cache.f, &state.v.t().dot(&x), 1e-12);
}

#[test]
fn mean_subtraction_centers_every_branch() {
    let mut cfg = base_cfg();
    cfg.mean_subtraction = true;
    cfg.phi = Phi::Relu;
    let p = param(0.5, 0.5, 0.5, 1.0, 0.1, 1);
    let state = init(&cfg, &UpdateRule::sgd(), 21).unwrap();
    let xi = arr2(&[[0.7, -0.4], [0.2, 0.9]]);
    let cache = forward(&state, &p, &xi).unwrap();
    for l in 0..cfg.l {
        let branch = &cache.xs[l + 1] - &cache.xs[l];
        for col in branch.columns() {
            assert!(col.sum().abs() < 1e-12, "branch not centered");
        }
    }
}

#[test]
fn pre_layernorm_normalizes_block_inputs() {
    let mut cfg = base_cfg();
    cfg.pre_layernorm = true;
    cfg.n = 64;
    let p = param(0.5, 0.5, 0.5, 1.0, 0.1, 1);
    let state = init(&cfg, &UpdateRule::sgd(), 13).unwrap();
    let xi = arr2(&[[0.7, -0.4], [0.2, 0.9]]);
    let cache = forward(&state, &p, &xi).unwrap();
    for z in &cache.block_inputs {
        for col in z.columns() {
            let mean = col.sum() / col.len() as f64;
            let msq = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((msq - 1.0).abs() < 1e-3, "normalized mean square {msq}");
        }
    }
}

#[test]
fn linear_network_is_homogeneous_in_the_input() {
    let cfg = base_cfg();
    let p = param(0.5, 0.5, 0.5, 1.2, 0.1, 2);
    let state = init(&cfg, &UpdateRule::sgd(), 31).unwrap();
    let xi = arr2(&[[0.7], [-0.3]]);
    let scaled = &xi * 3.5;
    let f1 = forward(&state, &p, &xi).unwrap().f;
    let f2 = forward(&state, &p, &scaled).unwrap().f;
    assert_arrays_close(&f2, &(&f1 * 3.5), 1e-12);
}

/// Width 1, one block, identity: every quantity in one SGD step has a short
/// closed form, including the depthwise update scale and gradient prescale.
#[test]
fn single_neuron_sgd_step_matches_hand_computation() {
    let cfg = NetConfig {
        d_in: 1,
        d_out: 1,
        n: 1,
        l: 1,
        k: 1,
        phi: Phi::Identity,
        placement: Placement::Post,
        mean_subtraction: false,
        pre_layernorm: false,
        train_io: true,
        loss: Loss::Squared,
    };
    // Depth ratio 1/2: multiplier = a * 2^alpha, update scale = eta * 2^gamma,
    // prescale = 2^{-delta}.
    let p = param(0.5, 1.0, 0.25, 0.8, 0.05, 2);
    let mut state = init(&cfg, &UpdateRule::sgd(), 2).unwrap();
    let (u0, v0, w0) = (state.u[(0, 0)], state.v[(0, 0)], state.w[0][0][(0, 0)]);
    let (xi, y) = (1.4, -0.6);

    let mult = 0.8 * 2f64.powf(0.5);
    let f = v0 * (1.0 + mult * w0) * u0 * xi;
    let chi = f - y;
    let dw = chi * v0 * mult * u0 * xi;
    let du = chi * v0 * (1.0 + mult * w0) * xi;
    let dv = chi * (1.0 + mult * w0) * u0 * xi;
    let lr = 0.05 * 2f64.powf(1.0) * 2f64.powf(-0.25);

    let batch = Batch { inputs: arr2(&[[xi]]), targets: Targets::Regression(arr2(&[[y]])) };
    let record = train_step(&mut state, &p, &UpdateRule::sgd(), &batch).unwrap();

    assert_relative_eq!(record.loss, 0.5 * chi * chi, max_relative = 1e-12);
    assert_relative_eq!(record.f_norm, f.abs(), max_relative = 1e-12);
    assert_relative_eq!(state.w[0][0][(0, 0)], w0 - lr * dw, max_relative = 1e-12);
    assert_relative_eq!(state.u[(0, 0)], u0 - lr * du, max_relative = 1e-12);
    assert_relative_eq!(state.v[(0, 0)], v0 - lr * dv, max_relative = 1e-12);
}

#[test]
fn nan_inputs_surface_as_errors() {
    let cfg = base_cfg();
    let p = param(0.5, 0.5, 0.5, 1.0, 0.1, 1);
    let state = init(&cfg, &UpdateRule::sgd(), 3).unwrap();
    let xi = Array2::from_elem((2, 1), f64::NAN);
    assert!(forward(&state, &p, &xi).is_err());
}
