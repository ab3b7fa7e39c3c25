//! Depth/width scaling space for residual networks.
//!
//! A [`Parametrization`] bundles the three depth exponents (`alpha` for the
//! branch multiplier, `gamma` for the effective update size, `delta` for the
//! gradient prescale fed to the entrywise update rule), the per-group width
//! exponents `(c, d)`, and the run constants `a`, `eta`, `base_depth`.
//! Depth enters every scale factor only through the ratio `L / base_depth`.
//!
//! [`classify_region`] maps an `(alpha, gamma)` point to the analytic region
//! taxonomy: unstable at initialization, unstable in training, trivial,
//! unfaithful, redundant, or the maximal point `alpha = gamma = 1/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for the equality comparisons in [`classify_region`].
pub const REGION_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("width must be at least 1")]
    ZeroWidth,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid constant: {0}")]
    InvalidConstant(&'static str),
}

/// Parameter group of a weight tensor. Input is `U`, output is `V`, hidden
/// covers every residual-branch matrix `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Input,
    Hidden,
    Output,
}

/// Entrywise update-rule family selector. SignSGD is the memoryless stand-in
/// for Adam; they share the raw learning-rate depth exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Sgd,
    SignSgd,
    Adam,
}

/// Width exponents of one parameter group: the effective learning rate
/// carries `n^{-c}` and the gradient prescale carries `n^{d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupExponents {
    pub c: f64,
    pub d: f64,
}

/// Width exponents for all three groups. Every group always has an entry, so
/// a missing-group configuration is unrepresentable; the config layer is
/// responsible for populating all six keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthExponents {
    pub input: GroupExponents,
    pub hidden: GroupExponents,
    pub output: GroupExponents,
}

impl WidthExponents {
    /// The maximal-update widthwise scaling: `c = (0, 1, 1)` for
    /// (input, hidden, output), and `d` chosen so the prescaled gradients fed
    /// to the update rule are width-Θ(1): raw input and hidden gradients are
    /// Θ(1/n) (`d = 1`), raw output gradients are Θ(1) (`d = 0`).
    pub fn mup() -> Self {
        WidthExponents {
            input: GroupExponents { c: 0.0, d: 1.0 },
            hidden: GroupExponents { c: 1.0, d: 1.0 },
            output: GroupExponents { c: 1.0, d: 0.0 },
        }
    }

    pub fn group(&self, group: Group) -> GroupExponents {
        match group {
            Group::Input => self.input,
            Group::Hidden => self.hidden,
            Group::Output => self.output,
        }
    }
}

/// Region taxonomy of the `(alpha, gamma)` plane under the documented
/// precedence order; see [`classify_region`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionClass {
    UnstableInit,
    UnstableTraining,
    Trivial,
    Unfaithful,
    Redundant,
    DepthMuP,
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionClass::UnstableInit => "UnstableInit",
            RegionClass::UnstableTraining => "UnstableTraining",
            RegionClass::Trivial => "Trivial",
            RegionClass::Unfaithful => "Unfaithful",
            RegionClass::Redundant => "Redundant",
            RegionClass::DepthMuP => "DepthMuP",
        };
        f.write_str(s)
    }
}

/// Full scaling description of one run.
///
/// Serialized as the flat key block
/// `alpha, gamma, delta, a, eta, base_depth, c_input, c_hidden, c_output,
/// d_input, d_hidden, d_output` inside the harness config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatParametrization", into = "FlatParametrization")]
pub struct Parametrization {
    /// Depth exponent of the branch multiplier: the branch carries
    /// `a * (L/L0)^{-alpha}`.
    pub alpha: f64,
    /// Depth exponent of the effective update size: the update carries
    /// `eta * n^{-c} * (L/L0)^{-gamma}`.
    pub gamma: f64,
    /// Depth exponent of the gradient prescale fed to the update rule:
    /// gradients enter as `n^{d} (L/L0)^{delta} g`.
    pub delta: f64,
    pub width: WidthExponents,
    /// Branch multiplier constant, > 0.
    pub a: f64,
    /// Learning-rate constant, > 0.
    pub eta: f64,
    /// Reference depth at which all depth factors equal 1.
    pub base_depth: u32,
}

/// Flat serialization mirror of [`Parametrization`] (the config-file layout).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct FlatParametrization {
    alpha: f64,
    gamma: f64,
    delta: f64,
    a: f64,
    eta: f64,
    base_depth: u32,
    c_input: f64,
    c_hidden: f64,
    c_output: f64,
    d_input: f64,
    d_hidden: f64,
    d_output: f64,
}

impl From<Parametrization> for FlatParametrization {
    fn from(p: Parametrization) -> Self {
        FlatParametrization {
            alpha: p.alpha,
            gamma: p.gamma,
            delta: p.delta,
            a: p.a,
            eta: p.eta,
            base_depth: p.base_depth,
            c_input: p.width.input.c,
            c_hidden: p.width.hidden.c,
            c_output: p.width.output.c,
            d_input: p.width.input.d,
            d_hidden: p.width.hidden.d,
            d_output: p.width.output.d,
        }
    }
}

impl TryFrom<FlatParametrization> for Parametrization {
    type Error = ParamError;

    fn try_from(f: FlatParametrization) -> Result<Self, ParamError> {
        let p = Parametrization {
            alpha: f.alpha,
            gamma: f.gamma,
            delta: f.delta,
            width: WidthExponents {
                input: GroupExponents { c: f.c_input, d: f.d_input },
                hidden: GroupExponents { c: f.c_hidden, d: f.d_hidden },
                output: GroupExponents { c: f.c_output, d: f.d_output },
            },
            a: f.a,
            eta: f.eta,
            base_depth: f.base_depth,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Parametrization {
    /// Checks the constant invariants: `a > 0`, `eta > 0`, `base_depth >= 1`,
    /// all exponents finite.
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(ParamError::InvalidConstant("a must be > 0"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ParamError::InvalidConstant("eta must be > 0"));
        }
        if self.base_depth == 0 {
            return Err(ParamError::InvalidConstant("base_depth must be >= 1"));
        }
        for (v, name) in [
            (self.alpha, "alpha"),
            (self.gamma, "gamma"),
            (self.delta, "delta"),
        ] {
            if !v.is_finite() {
                return Err(ParamError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Depth ratio `L / base_depth` as a float.
    fn depth_ratio(&self, depth: u32) -> Result<f64, ParamError> {
        if depth == 0 {
            return Err(ParamError::ZeroDepth);
        }
        Ok(f64::from(depth) / f64::from(self.base_depth))
    }

    /// Branch multiplier `a * (L/L0)^{-alpha}`.
    pub fn branch_multiplier(&self, depth: u32) -> Result<f64, ParamError> {
        Ok(self.a * self.depth_ratio(depth)?.powf(-self.alpha))
    }

    /// Effective learning rate `eta * n^{-c} * (L/L0)^{-gamma}` for `group`.
    pub fn effective_update_scale(
        &self,
        depth: u32,
        width: u32,
        group: Group,
    ) -> Result<f64, ParamError> {
        if width == 0 {
            return Err(ParamError::ZeroWidth);
        }
        let c = self.width.group(group).c;
        Ok(self.eta * f64::from(width).powf(-c) * self.depth_ratio(depth)?.powf(-self.gamma))
    }

    /// Gradient prescale `n^{d} * (L/L0)^{delta}` for `group`.
    pub fn grad_prescale(&self, depth: u32, width: u32, group: Group) -> Result<f64, ParamError> {
        if width == 0 {
            return Err(ParamError::ZeroWidth);
        }
        let d = self.width.group(group).d;
        Ok(f64::from(width).powf(d) * self.depth_ratio(depth)?.powf(self.delta))
    }

    /// Depth exponent `e` of the user-facing learning rate, `lr ∝ L^e`:
    /// `alpha - gamma` for SGD (the branch multiplier shrinks the raw
    /// gradient, which SGD passes through) and `-gamma` for the
    /// scale-invariant rules SignSGD and Adam.
    pub fn raw_lr_depth_exponent(&self, kind: RuleKind) -> f64 {
        match kind {
            RuleKind::Sgd => self.alpha - self.gamma,
            RuleKind::SignSgd | RuleKind::Adam => -self.gamma,
        }
    }

    /// Classification of this parametrization's `(alpha, gamma)` point.
    pub fn classify(&self) -> Result<RegionClass, ParamError> {
        classify_region(self.alpha, self.gamma)
    }
}

/// The maximal point `alpha = gamma = delta = 1/2` with maximal-update width
/// exponents and default constants `a = 1`, `eta = 1e-3`, `base_depth = 8`.
///
/// `delta` equals `alpha` so that prescaled hidden gradients stay depth-Θ(1):
/// the branch multiplier already shrinks raw hidden gradients by
/// `(L/L0)^{-alpha}`. The `rule_kind` does not change the exponents, only how
/// the raw learning rate should be scheduled (see
/// [`Parametrization::raw_lr_depth_exponent`]).
pub fn depth_mup_preset(_rule_kind: RuleKind) -> Parametrization {
    Parametrization {
        alpha: 0.5,
        gamma: 0.5,
        delta: 0.5,
        width: WidthExponents::mup(),
        a: 1.0,
        eta: 1e-3,
        base_depth: 8,
    }
}

/// Classifies a point of the `(alpha, gamma)` plane.
///
/// Precedence order, with equality at absolute tolerance [`REGION_TOL`] on
/// `alpha` and on `alpha + gamma`:
///
/// 1. `alpha < 1/2` → `UnstableInit` (block noise accumulates at init),
/// 2. `alpha + gamma < 1` → `UnstableTraining` (update drift accumulates),
/// 3. `alpha + gamma > 1` → `Trivial` (the limit stops learning),
/// 4. on `alpha + gamma = 1`: `alpha > 1` → `Unfaithful`,
///    `1/2 < alpha <= 1` → `Redundant`, `alpha = 1/2` → `DepthMuP`.
pub fn classify_region(alpha: f64, gamma: f64) -> Result<RegionClass, ParamError> {
    if !alpha.is_finite() {
        return Err(ParamError::NonFinite("alpha"));
    }
    if !gamma.is_finite() {
        return Err(ParamError::NonFinite("gamma"));
    }
    let alpha_is_half = (alpha - 0.5).abs() <= REGION_TOL;
    if alpha < 0.5 && !alpha_is_half {
        return Ok(RegionClass::UnstableInit);
    }
    let sum = alpha + gamma;
    let sum_is_one = (sum - 1.0).abs() <= REGION_TOL;
    if !sum_is_one {
        return Ok(if sum < 1.0 {
            RegionClass::UnstableTraining
        } else {
            RegionClass::Trivial
        });
    }
    if alpha_is_half {
        return Ok(RegionClass::DepthMuP);
    }
    if alpha > 1.0 + REGION_TOL {
        Ok(RegionClass::Unfaithful)
    } else {
        Ok(RegionClass::Redundant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_serde_round_trip() {
        let p = depth_mup_preset(RuleKind::Adam);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"c_hidden\":1.0"), "flat keys expected: {s}");
        let back: Parametrization = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn flat_serde_rejects_bad_constants() {
        let mut flat: serde_json::Value =
            serde_json::to_value(depth_mup_preset(RuleKind::Sgd)).unwrap();
        flat["eta"] = serde_json::json!(-1.0);
        let err = serde_json::from_value::<Parametrization>(flat);
        assert!(err.is_err());
    }
}
