//! Finite-width residual MLP with manual forward/backward and entrywise
//! training steps: the Monte-Carlo ground truth for every limit claim.
//!
//! The architecture is a biasless residual perceptron stack,
//!
//! ```text
//! x^0 = U xi,
//! x^l = x^{l-1} + mult * g^l,    g^l = [MS] block(x^{l-1}),
//! f   = V^T x^L,
//! ```
//!
//! where `mult = a (L/L0)^{-alpha}` is the branch multiplier, the block is a
//! depth-`k` perceptron (`post` placement: `phi` after each matrix multiply)
//! or the single-layer `W phi(x)` form (`pre` placement), `MS` is mean
//! subtraction across coordinates, and an optional pre-LayerNorm is applied
//! to the block input. Initialization follows the maximal-update widthwise
//! scaling: entry variances 1 for `U`, `n^{-2}` for `V`, `n^{-1}` for `W`.
//!
//! Two engines share this math:
//! - [`dense`]: explicit matrices, any batch, any block depth; exact
//!   reverse-mode gradients.
//! - [`wide`]: a scalar-stream engine for very large widths that never
//!   materializes `W_0`, sampling `W_0 v` and `W_0^T u` exactly from the
//!   conditional Gaussian law given all previous queries and tracking the
//!   rank-per-step weight updates explicitly.

pub mod checkpoint;
pub mod dense;
pub mod steplog;
pub mod wide;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dense::{backward, feature_snapshot, forward, init, train_step, ForwardCache, Gradients, NetState};
pub use steplog::StepRecord;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid net config: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite activation in block {layer}")]
    NonFinite { layer: usize },
    #[error("batch/config shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error(transparent)]
    Param(#[from] parametrization::ParamError),
    #[error(transparent)]
    Optim(#[from] entrywise_optim::OptimError),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pointwise nonlinearity. Derivatives use the symmetric convention
/// `relu'(0) = 0` and `abs'(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    Identity,
    Relu,
    Abs,
}

impl Phi {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Phi::Identity => x,
            Phi::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Phi::Abs => x.abs(),
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Phi::Identity => 1.0,
            Phi::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Phi::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Whether the nonlinearity sits after the matrix multiply (`post`,
/// `phi(W x)`) or before it (`pre`, `W phi(x)`; block depth 1 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Post,
    Pre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    SoftmaxCrossEntropy,
}

/// Architecture and training-surface description of one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_in: usize,
    pub d_out: usize,
    /// Width.
    pub n: usize,
    /// Number of residual blocks.
    pub l: usize,
    /// Layers per block.
    pub k: usize,
    pub phi: Phi,
    pub placement: Placement,
    pub mean_subtraction: bool,
    pub pre_layernorm: bool,
    /// Whether `U` and `V` train; when off, only `W` gradients exist.
    pub train_io: bool,
    pub loss: Loss,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 || self.l == 0 || self.k == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(SimError::InvalidConfig("all dimensions must be >= 1"));
        }
        if self.placement == Placement::Pre && self.k != 1 {
            return Err(SimError::InvalidConfig("pre placement requires block depth 1"));
        }
        Ok(())
    }
}

/// One batch: inputs are `d_in x B`, targets are `d_out x B` regression
/// values or class indices (length `B`).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

#[derive(Debug, Clone)]
pub enum Targets {
    Regression(Array2<f64>),
    Classes(Vec<usize>),
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Mean subtraction: removes the coordinate mean of a width-`n` vector.
/// Idempotent; output coordinates sum to zero up to rounding.
pub fn ms(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    ms_in_place(&mut out);
    out
}

/// In-place [`ms`].
pub fn ms_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for v in x {
        *v -= mean;
    }
}

/// Column-wise mean subtraction of an `n x B` activation block.
pub fn ms_columns(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let mean = col.sum() / col.len() as f64;
        col.mapv_inplace(|v| v - mean);
    }
}

/// LayerNorm stabilizer inside the square root.
pub const LN_EPSILON: f64 = 1e-6;

/// Batch loss (mean over columns) and the per-sample output-loss gradients
/// `chi_b = d loss_b / d f_b` (not divided by the batch size).
pub fn loss_and_chi(loss: Loss, f: &Array2<f64>, targets: &Targets) -> Result<(f64, Array2<f64>), SimError> {
    let b = f.ncols();
    let d_out = f.nrows();
    let mut chi = Array2::zeros((d_out, b));
    let mut total = 0.0;
    match (loss, targets) {
        (Loss::Squared, Targets::Regression(y)) => {
            if y.dim() != f.dim() {
                return Err(SimError::ShapeMismatch("targets shape"));
            }
            for j in 0..b {
                for i in 0..d_out {
                    let r = f[(i, j)] - y[(i, j)];
                    chi[(i, j)] = r;
                    total += 0.5 * r * r;
                }
            }
        }
        (Loss::SoftmaxCrossEntropy, Targets::Classes(cls)) => {
            if cls.len() != b {
                return Err(SimError::ShapeMismatch("class count"));
            }
            for j in 0..b {
                let y = cls[j];
                if y >= d_out {
                    return Err(SimError::ShapeMismatch("class index out of range"));
                }
                let col = f.column(j);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..d_out {
                    z += (col[i] - max).exp();
                }
                total += z.ln() + max - col[y];
                for i in 0..d_out {
                    let p = (col[i] - max).exp() / z;
                    chi[(i, j)] = p - if i == y { 1.0 } else { 0.0 };
                }
            }
        }
        _ => return Err(SimError::ShapeMismatch("loss/targets kind mismatch")),
    }
    Ok((total / b as f64, chi))
}
