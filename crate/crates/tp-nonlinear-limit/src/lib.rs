//! Infinite-width training dynamics of the nonlinear residual stream at the
//! depthwise feature-learning point, plus the Gaussian activation kernels the
//! dynamics is built from.
//!
//! [`kernels`] evaluates the three bivariate Gaussian pairings of an
//! activation (centered covariance, derivative pairing, backward passthrough
//! pairing) in closed form, with an independent piecewise-polar quadrature
//! route for verification. [`engine`] evolves the deterministic width limit
//! of SGD on the residual network with that activation, mean-subtracted
//! branches, and the `1/sqrt(depth)` branch scaling; with the identity
//! activation it reproduces the linear limit exactly.

pub mod engine;
pub mod kernels;

pub use engine::{
    estimate_table_bytes, run_nonlinear, CTable, GammaTable, NonlinearConfig, NonlinearError,
    NonlinearTrace, TABLE_BYTE_BUDGET,
};
pub use kernels::{
    gauss_legendre, v_c_prime, v_phi_c, v_phi_prime, v_quadrature, Activation, GaussPair,
    KernelError, PieceLin, VKernelSet, VcPrimeVariant,
};
