//! Depth scaling of the first-order output update in the single-neuron
//! residual chain.
//!
//! The model: a depth-L product network x^L = prod_l (1 + W_l/sqrt(L)) * x0
//! with scalar weights W_l ~ N(0,1), readout V ~ N(0,1), target y, and squared
//! loss. One optimizer step changes the output at first order by
//! (eta/sqrt(L)) * A_L with
//!
//!   A_L = sum_l prod_{k!=l} (1 + W_k/sqrt(L)) * G_l * x0,
//!
//! where the raw gradient is g_l = (1/sqrt(L)) * prod_{k!=l}(1+W_k/sqrt(L)) *
//! x0 * dx, dx = V x^L - y. SGD takes G_l = g_l; sign descent takes
//! G_l = sign(g_l). E[A_L^2] grows like L for SGD and L^2 for sign descent;
//! `warmup_al_scaling` fits that exponent by Monte Carlo and
//! `warmup_exact_second_moment` evaluates the exact mean in closed form.

use crate::{fit_power_law, DiagError, PowerLawFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Optimizer rule for the single-neuron warm-up model. Only these two define
/// the model; width-aware rules live in the optimizer crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupRule {
    Sgd,
    SignSgd,
}

impl WarmupRule {
    pub fn label(self) -> &'static str {
        match self {
            WarmupRule::Sgd => "sgd",
            WarmupRule::SignSgd => "sign-sgd",
        }
    }
}

const X0: f64 = 1.0;
const TARGET: f64 = 1.0;

/// Monte-Carlo curve of E[A_L^2] per depth: returns (depth, mean of A_L^2)
/// pairs in the order given.
///
/// Sampling design: each trial owns one ChaCha stream and draws a single
/// Gaussian path at the finest depth; every depth that divides it reuses the
/// path through block sums scaled by 1/sqrt(block) (which are again i.i.d.
/// N(0,1), so each per-depth mean is an unbiased plain average over trials).
/// Depths that do not divide the finest draw fresh normals from the same
/// trial stream. The coupling makes the heavy upper tail of A_L^2 (a
/// lognormal-like product) land on the same trials at every depth, so it
/// cancels from the fitted slope instead of drowning it; with independent
/// streams the slope estimate at 1e4 trials is noise-dominated.
pub fn warmup_al_curve(
    rule: WarmupRule,
    depths: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, DiagError> {
    if depths.len() < 3 {
        return Err(DiagError::Domain("warm-up scaling needs at least 3 depths"));
    }
    if depths.iter().any(|&d| d == 0) {
        return Err(DiagError::Domain("warm-up depths must be at least 1"));
    }
    if trials < 1000 {
        return Err(DiagError::Domain("warm-up scaling needs at least 1000 trials"));
    }
    let finest = *depths.iter().max().expect("nonempty");
    let mut path = vec![0.0f64; finest];
    let mut w: Vec<Vec<f64>> = depths.iter().map(|&d| vec![0.0f64; d]).collect();
    let mut pre = vec![0.0f64; finest + 1];
    let mut suf = vec![0.0f64; finest + 1];
    let mut sums = vec![0.0f64; depths.len()];

    for trial in 0..trials {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let v: f64 = rng.sample(StandardNormal);
        for slot in path.iter_mut() {
            *slot = rng.sample(StandardNormal);
        }
        for (di, &depth) in depths.iter().enumerate() {
            let w = &mut w[di];
            if finest % depth == 0 {
                let block = finest / depth;
                let scale = 1.0 / (block as f64).sqrt();
                for (k, slot) in w.iter_mut().enumerate() {
                    *slot = path[k * block..(k + 1) * block].iter().sum::<f64>() * scale;
                }
            } else {
                for slot in w.iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
            }
            let a = first_order_update(rule, w, v, &mut pre, &mut suf);
            sums[di] += a * a;
        }
    }

    Ok(depths
        .iter()
        .zip(&sums)
        .map(|(&d, &s)| (d as f64, s / trials as f64))
        .collect())
}

/// Fits the depth exponent of E[A_L^2] from the Monte-Carlo curve.
pub fn warmup_al_scaling(
    rule: WarmupRule,
    depths: &[usize],
    trials: usize,
    seed: u64,
) -> Result<PowerLawFit, DiagError> {
    fit_power_law(&warmup_al_curve(rule, depths, trials, seed)?)
}

/// A_L for one weight sample, via prefix/suffix products (no division, so a
/// near-zero factor is harmless).
fn first_order_update(
    rule: WarmupRule,
    w: &[f64],
    v: f64,
    pre: &mut [f64],
    suf: &mut [f64],
) -> f64 {
    let depth = w.len();
    let root = (depth as f64).sqrt();
    pre[0] = 1.0;
    for l in 0..depth {
        pre[l + 1] = pre[l] * (1.0 + w[l] / root);
    }
    suf[depth] = 1.0;
    for l in (0..depth).rev() {
        suf[l] = suf[l + 1] * (1.0 + w[l] / root);
    }
    let full = pre[depth];
    let dx = v * full * X0 - TARGET;
    let mut a = 0.0;
    for l in 0..depth {
        let p = pre[l] * suf[l + 1];
        let grad = p * X0 * dx / root;
        let g = match rule {
            WarmupRule::Sgd => grad,
            WarmupRule::SignSgd => grad.signum(),
        };
        a += p * g * X0;
    }
    a
}

/// Exact E[A_L^2] for the model above (x0 = 1, y = 1, V ~ N(0,1)).
///
/// With F = 1 + W/sqrt(L), mu_p = E[F^{2p}], M = prod_k F_k and
/// X = sum_l prod_{k!=l} F_k^2:
///   SGD:  E[A^2] = (E[M^2 X^2] + y^2 E[X^2]) / L, where
///         E[X^2]     = L(L-1) mu1^2 mu2^{L-2} + L mu2^{L-1},
///         E[M^2 X^2] = L(L-1) mu2^2 mu3^{L-2} + L mu1 mu3^{L-1}.
///   Sign: E[A^2] = E[(sum_l |P_l|)^2]
///                = L(L-1) (E|F|)^2 mu1^{L-2} + L mu1^{L-1}.
/// Used as the frozen oracle for the Monte-Carlo estimator and for exact
/// exponent analysis on grids where 1e4-trial averages are tail-dominated.
pub fn warmup_exact_second_moment(rule: WarmupRule, depth: usize) -> Result<f64, DiagError> {
    if depth < 2 {
        return Err(DiagError::Domain("exact warm-up moment needs depth >= 2"));
    }
    let l = depth as f64;
    let mu1 = 1.0 + 1.0 / l;
    match rule {
        WarmupRule::Sgd => {
            let mu2 = 1.0 + 6.0 / l + 3.0 / (l * l);
            let mu3 = 1.0 + 15.0 / l + 45.0 / (l * l) + 15.0 / (l * l * l);
            let ex2 = l * (l - 1.0) * mu1 * mu1 * mu2.powi(depth as i32 - 2)
                + l * mu2.powi(depth as i32 - 1);
            let em2x2 = l * (l - 1.0) * mu2 * mu2 * mu3.powi(depth as i32 - 2)
                + l * mu1 * mu3.powi(depth as i32 - 1);
            Ok((em2x2 + TARGET * TARGET * ex2) / l)
        }
        WarmupRule::SignSgd => {
            // E|F| for F ~ N(1, 1/L): 1 - erfc(sqrt(L/2)) + sqrt(2/(pi L)) e^{-L/2}.
            let ef = 1.0 - erfc((l / 2.0).sqrt())
                + (2.0 / (std::f64::consts::PI * l)).sqrt() * (-l / 2.0).exp();
            Ok(l * (l - 1.0) * ef * ef * mu1.powi(depth as i32 - 2) + l * mu1.powi(depth as i32 - 1))
        }
    }
}

/// Complementary error function via the classical continued fraction,
/// accurate to machine precision for t >= 1 (all uses here have t >= 1).
fn erfc(t: f64) -> f64 {
    debug_assert!(t >= 1.0);
    let mut tail = 0.0;
    for n in (1..=300).rev() {
        tail = (n as f64 / 2.0) / (t + tail);
    }
    (-t * t).exp() / std::f64::consts::PI.sqrt() / (t + tail)
}
