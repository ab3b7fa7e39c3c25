//! Layerwise-linearization residual: how far a trained block's map sits
//! from its first-order expansion around the initial weights.
//!
//! For block input z (recomputed on the trained network) the residual is
//! `phi(W_t z) - phi(W_0 z) - phi'(W_0 z) . ((W_t - W_0) z)`, mean-subtracted
//! when the architecture trains that way, measured as RMS per unit width and
//! scaled by `L^{-alpha}` to sit in the same units as one branch
//! contribution. Identity activations and untrained weights give exactly 0;
//! a residual shrinking faster than 1/L is what makes the whole stack act
//! linearized in its updates even while features move.

use crate::DiagError;
use ndarray::Array2;
use parametrization::Parametrization;
use resnet_sim::{forward, ms_columns, NetState, Placement};

/// Scaled residual norm of `layer` on an evaluation batch.
///
/// `init` must be the step-0 state the training run started from; `trained`
/// is any later state of the same run. Single-matrix blocks only: with a
/// deeper perceptron in the block the expansion point is ambiguous.
pub fn linearization_residual(
    trained: &NetState,
    init: &NetState,
    p: &Parametrization,
    inputs: &Array2<f64>,
    layer: usize,
) -> Result<f64, DiagError> {
    if init.step != 0 {
        return Err(DiagError::Domain("reference state must be untrained (step 0)"));
    }
    if trained.cfg != init.cfg || trained.seed != init.seed {
        return Err(DiagError::Domain("trained and reference states must share config and seed"));
    }
    let cfg = &trained.cfg;
    if cfg.placement != Placement::Post || cfg.k != 1 {
        return Err(DiagError::Domain(
            "linearization residual is defined for single-matrix post-activation blocks",
        ));
    }
    if layer >= cfg.l {
        return Err(DiagError::Domain("layer index out of range"));
    }

    let cache = forward(trained, p, inputs)?;
    let z = &cache.block_inputs[layer];
    let w_t = &trained.w[layer][0];
    let w_0 = &init.w[layer][0];
    let h_t = w_t.dot(z);
    let h_0 = w_0.dot(z);

    let phi = cfg.phi;
    let mut resid = Array2::zeros(h_t.raw_dim());
    ndarray::Zip::from(&mut resid).and(&h_t).and(&h_0).for_each(|r, &ht, &h0| {
        *r = phi.eval(ht) - phi.eval(h0) - phi.deriv(h0) * (ht - h0);
    });
    if cfg.mean_subtraction {
        ms_columns(&mut resid);
    }

    let n = cfg.n as f64;
    let batch = resid.ncols() as f64;
    let mut mean_rms = 0.0;
    for col in resid.columns() {
        mean_rms += (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    }
    mean_rms /= batch;
    Ok((cfg.l as f64).powf(-p.alpha) * mean_rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use entrywise_optim::UpdateRule;
    use ndarray::Array2;
    use parametrization::WidthExponents;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;
    use resnet_sim::{init, train_step, Batch, Loss, NetConfig, NetState, Phi, Targets};

    fn cfg(phi: Phi) -> NetConfig {
        NetConfig {
            d_in: 3,
            d_out: 2,
            n: 16,
            l: 4,
            k: 1,
            phi,
            placement: Placement::Post,
            mean_subtraction: true,
            pre_layernorm: false,
            train_io: true,
            loss: Loss::Squared,
        }
    }

    fn depth_mup() -> Parametrization {
        Parametrization {
            alpha: 0.5,
            gamma: 0.5,
            delta: 0.5,
            width: WidthExponents::mup(),
            a: 1.0,
            eta: 0.2,
            base_depth: 1,
        }
    }

    fn trained_pair(phi: Phi, steps: usize) -> (NetState, NetState, Parametrization, Array2<f64>) {
        let cfg = cfg(phi);
        let p = depth_mup();
        let rule = UpdateRule::adam();
        let start = init(&cfg, &rule, 11).unwrap();
        let mut state = start.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let inputs =
            Array2::from_shape_fn((cfg.d_in, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let targets =
            Array2::from_shape_fn((cfg.d_out, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let batch = Batch { inputs: inputs.clone(), targets: Targets::Regression(targets) };
        for _ in 0..steps {
            train_step(&mut state, &p, &rule, &batch).unwrap();
        }
        (state, start, p, inputs)
    }

    #[test]
    fn untrained_state_has_zero_residual() {
        let (_, start, p, inputs) = trained_pair(Phi::Relu, 0);
        for layer in 0..start.cfg.l {
            let r = linearization_residual(&start, &start, &p, &inputs, layer).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn identity_activation_has_zero_residual_after_training() {
        let (trained, start, p, inputs) = trained_pair(Phi::Identity, 5);
        assert!(trained.step == 5);
        for layer in 0..start.cfg.l {
            let r = linearization_residual(&trained, &start, &p, &inputs, layer).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn relu_residual_is_positive_after_training() {
        let (trained, start, p, inputs) = trained_pair(Phi::Relu, 5);
        let r = linearization_residual(&trained, &start, &p, &inputs, 1).unwrap();
        assert!(r > 0.0, "residual {r}");
    }

    #[test]
    fn misuse_is_rejected() {
        let (trained, start, p, inputs) = trained_pair(Phi::Relu, 2);
        assert!(linearization_residual(&trained, &trained, &p, &inputs, 0).is_err());
        assert!(linearization_residual(&trained, &start, &p, &inputs, 99).is_err());
        let rule = UpdateRule::adam();
        let other = init(&start.cfg, &rule, 12).unwrap();
        assert!(linearization_residual(&trained, &other, &p, &inputs, 0).is_err());
    }
}
