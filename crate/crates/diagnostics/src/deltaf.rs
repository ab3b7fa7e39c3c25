//! One-step output movement across depth.
//!
//! Train the infinite-width limit for a single step on one input, then read
//! the output change on a held-out input. Under the depthwise exponents
//! (alpha, gamma) this movement scales as `L^{1 - alpha - gamma}`: flat at
//! the feature-learning point, decaying when updates are overdamped, growing
//! when they are too hot.

use crate::{fit_power_law, DiagError, PowerLawFit};
use tp_linear_limit::{run_generalized, LimitConfig};
use tp_nonlinear_limit::{run_nonlinear, Activation, NonlinearConfig};

/// Which limit recursion produces the trace.
///
/// The nonlinear recursion is only defined at `alpha = gamma = 1/2`; the
/// linear one covers every stable pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltafEngine {
    Linear,
    Nonlinear(Activation),
}

/// |f(probe)| after one update on `inputs[0]` toward `target`, for each
/// depth. The output starts at zero, so this is exactly the one-step
/// movement on the held-out `inputs[1]`.
pub fn deltaf_curve(
    engine: DeltafEngine,
    alpha: f64,
    gamma: f64,
    depths: &[usize],
    inputs: [f64; 2],
    target: f64,
    eta: f64,
) -> Result<Vec<(f64, f64)>, DiagError> {
    if depths.len() < 2 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DiagError::Domain("deltaf needs at least 2 strictly increasing depths"));
    }
    if depths[0] == 0 {
        return Err(DiagError::Domain("deltaf depths must be positive"));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(DiagError::Domain("deltaf learning rate must be positive"));
    }
    if !(target.is_finite() && target != 0.0) {
        return Err(DiagError::Domain("deltaf target must be nonzero"));
    }
    if inputs.iter().any(|x| !x.is_finite() || *x == 0.0) {
        return Err(DiagError::Domain("deltaf inputs must be finite and nonzero"));
    }
    if let DeltafEngine::Nonlinear(_) = engine {
        if (alpha - 0.5).abs() > 1e-12 || (gamma - 0.5).abs() > 1e-12 {
            return Err(DiagError::Domain(
                "the nonlinear limit is only defined at alpha = gamma = 1/2",
            ));
        }
    }

    // Two steps: train on inputs[0] with the real target, then a throwaway
    // second step whose pre-update output f[1] is the probe readout.
    let train_probe = [inputs[0], inputs[1]];
    let targets = [target, 0.0];
    let mut curve = Vec::with_capacity(depths.len());
    for &depth in depths {
        let df = match engine {
            DeltafEngine::Linear => {
                let cfg = LimitConfig {
                    depth,
                    alpha,
                    gamma,
                    eta,
                    inputs: train_probe.to_vec(),
                    targets: targets.to_vec(),
                };
                run_generalized(&cfg)?.f[1]
            }
            DeltafEngine::Nonlinear(phi) => {
                let cfg = NonlinearConfig::new(depth, phi, eta, &train_probe, &targets);
                run_nonlinear(&cfg)?.f[1]
            }
        };
        curve.push((depth as f64, df.abs()));
    }
    Ok(curve)
}

/// Power-law fit of the movement curve; the exponent estimates
/// `1 - alpha - gamma`.
pub fn deltaf_exponent(
    engine: DeltafEngine,
    alpha: f64,
    gamma: f64,
    depths: &[usize],
    inputs: [f64; 2],
    target: f64,
    eta: f64,
) -> Result<PowerLawFit, DiagError> {
    let curve = deltaf_curve(engine, alpha, gamma, depths, inputs, target, eta)?;
    fit_power_law(&curve)
}
