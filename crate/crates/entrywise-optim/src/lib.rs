//! Entrywise gradient-processing rules: SGD, SignSGD, Adam.
//!
//! The rule family `Q_t` consumes the prescaled gradient history
//! `n^d (L/L0)^delta g_0, ..., n^d (L/L0)^delta g_t` of one parameter tensor
//! and produces the per-entry update direction. [`apply_update`] wraps a rule
//! with the depth/width scale factors: the weight moves by
//! `-(effective update scale) * Q_t(prescale * g)`.
//!
//! SignSGD and Adam are scale-invariant in the gradient magnitude (Adam
//! exactly so at `epsilon = 0`), which is why their raw learning rate carries
//! a different depth exponent than SGD's.

use parametrization::{Group, ParamError, Parametrization};
pub use parametrization::RuleKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("invalid rule constant: {0}")]
    InvalidRule(&'static str),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Rule selector plus the Adam constants. The constants are ignored by SGD
/// and SignSGD but kept in one record so a run manifest can echo them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub kind: RuleKind,
    /// First-moment EMA coefficient, in [0, 1).
    pub beta1: f64,
    /// Second-moment EMA coefficient, in [0, 1).
    pub beta2: f64,
    /// Denominator stabilizer inside the square root, >= 0.
    pub epsilon: f64,
}

impl UpdateRule {
    pub fn sgd() -> Self {
        UpdateRule { kind: RuleKind::Sgd, beta1: 0.0, beta2: 0.0, epsilon: 0.0 }
    }

    pub fn sign_sgd() -> Self {
        UpdateRule { kind: RuleKind::SignSgd, beta1: 0.0, beta2: 0.0, epsilon: 0.0 }
    }

    /// Adam with the standard constants beta1 = 0.9, beta2 = 0.999,
    /// epsilon = 1e-8.
    pub fn adam() -> Self {
        UpdateRule { kind: RuleKind::Adam, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(OptimError::InvalidRule("beta1 must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidRule("beta2 must be in [0, 1)"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(OptimError::InvalidRule("epsilon must be >= 0"));
        }
        Ok(())
    }
}

/// Per-tensor moment state. One state owns exactly one parameter tensor; the
/// step counter `t` counts completed [`OptimizerState::q_eval`] calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    len: usize,
    step: u64,
    /// First-moment accumulator (Adam only; empty otherwise).
    m: Vec<f64>,
    /// Second-moment accumulator (Adam only; empty otherwise), entrywise >= 0.
    v: Vec<f64>,
    saw_nan: bool,
}

impl OptimizerState {
    pub fn new(rule: &UpdateRule, len: usize) -> Self {
        let (m, v) = match rule.kind {
            RuleKind::Adam => (vec![0.0; len], vec![0.0; len]),
            RuleKind::Sgd | RuleKind::SignSgd => (Vec::new(), Vec::new()),
        };
        OptimizerState { len, step: 0, m, v, saw_nan: false }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of q_eval calls completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// True once any processed gradient contained a NaN.
    pub fn saw_nan(&self) -> bool {
        self.saw_nan
    }

    /// Evaluates `Q_t` on the next prescaled gradient and advances the state.
    ///
    /// SGD returns the gradient unchanged; SignSGD returns the entrywise sign
    /// with `sign(0) = 0`; Adam returns the bias-corrected moment ratio
    /// `m_hat / sqrt(v_hat + epsilon)`. Panics if `g_scaled` does not match
    /// the owned tensor length (contract violation).
    pub fn q_eval(&mut self, rule: &UpdateRule, g_scaled: &[f64], out: &mut [f64]) {
        assert_eq!(g_scaled.len(), self.len, "gradient length mismatch");
        assert_eq!(out.len(), self.len, "output length mismatch");
        match rule.kind {
            RuleKind::Sgd => {
                for (o, &g) in out.iter_mut().zip(g_scaled) {
                    self.saw_nan |= g.is_nan();
                    *o = g;
                }
            }
            RuleKind::SignSgd => {
                for (o, &g) in out.iter_mut().zip(g_scaled) {
                    self.saw_nan |= g.is_nan();
                    *o = sign(g);
                }
            }
            RuleKind::Adam => {
                let (bc1, bc2) = self.bias_corrections(rule);
                for i in 0..self.len {
                    let g = g_scaled[i];
                    self.saw_nan |= g.is_nan();
                    out[i] = adam_entry(&mut self.m[i], &mut self.v[i], g, rule, bc1, bc2);
                }
            }
        }
        self.step += 1;
    }

    /// Allocation-friendly wrapper around [`OptimizerState::q_eval`].
    pub fn q_eval_vec(&mut self, rule: &UpdateRule, g_scaled: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g_scaled.len()];
        self.q_eval(rule, g_scaled, &mut out);
        out
    }

    fn bias_corrections(&self, rule: &UpdateRule) -> (f64, f64) {
        let t1 = (self.step + 1) as i32;
        (1.0 - rule.beta1.powi(t1), 1.0 - rule.beta2.powi(t1))
    }

    /// Raw view `(step, m, v, saw_nan)` for binary serialization.
    pub fn raw_parts(&self) -> (u64, &[f64], &[f64], bool) {
        (self.step, &self.m, &self.v, self.saw_nan)
    }

    /// Rebuilds a state from serialized parts. The moment vectors must both
    /// be empty (SGD/SignSGD) or both have length `len` (Adam).
    pub fn from_raw_parts(
        len: usize,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
        saw_nan: bool,
    ) -> Result<Self, OptimError> {
        let ok = (m.is_empty() && v.is_empty()) || (m.len() == len && v.len() == len);
        if !ok {
            return Err(OptimError::InvalidRule("moment vectors inconsistent with tensor length"));
        }
        Ok(OptimizerState { len, step, m, v, saw_nan })
    }
}

/// Entrywise sign with `sign(0) = 0`; NaN propagates.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else if x == 0.0 {
        0.0
    } else {
        f64::NAN
    }
}

fn adam_entry(m: &mut f64, v: &mut f64, g: f64, rule: &UpdateRule, bc1: f64, bc2: f64) -> f64 {
    *m = rule.beta1 * *m + (1.0 - rule.beta1) * g;
    *v = rule.beta2 * *v + (1.0 - rule.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    m_hat / (v_hat + rule.epsilon).sqrt()
}

/// One optimizer step on a flat weight tensor:
/// `w -= effective_update_scale * Q_t(grad_prescale * g)`.
///
/// The moments and the step counter advance even when the gradient is zero.
pub fn apply_update(
    w: &mut [f64],
    grads: &[f64],
    p: &Parametrization,
    rule: &UpdateRule,
    state: &mut OptimizerState,
    depth: u32,
    width: u32,
    group: Group,
) -> Result<(), OptimError> {
    assert_eq!(w.len(), grads.len(), "weight/gradient length mismatch");
    assert_eq!(w.len(), state.len, "weight/state length mismatch");
    let scale = p.effective_update_scale(depth, width, group)?;
    let prescale = p.grad_prescale(depth, width, group)?;
    match rule.kind {
        RuleKind::Sgd => {
            for (wi, &g) in w.iter_mut().zip(grads) {
                state.saw_nan |= g.is_nan();
                *wi -= scale * (prescale * g);
            }
        }
        RuleKind::SignSgd => {
            for (wi, &g) in w.iter_mut().zip(grads) {
                state.saw_nan |= g.is_nan();
                *wi -= scale * sign(prescale * g);
            }
        }
        RuleKind::Adam => {
            let (bc1, bc2) = state.bias_corrections(rule);
            for i in 0..w.len() {
                let g = prescale * grads[i];
                state.saw_nan |= g.is_nan();
                w[i] -= scale * adam_entry(&mut state.m[i], &mut state.v[i], g, rule, bc1, bc2);
            }
        }
    }
    state.step += 1;
    Ok(())
}
