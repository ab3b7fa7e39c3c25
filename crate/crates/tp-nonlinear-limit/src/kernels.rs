//! Gaussian pairing kernels of the supported activations.
//!
//! The infinite-width dynamics never sees individual coordinates, only
//! expectations of activation products over a bivariate Gaussian: the
//! covariance of two centered activations, the pairing of two activation
//! derivatives, and the derivative pairing that weights passthrough
//! corrections. This module provides those kernels in closed form for the
//! supported activations plus an independent quadrature route used to verify
//! the closed forms.
//!
//! The quadrature exploits that every supported integrand factor (activation
//! or derivative) is linear on each side of zero. Over one quadrant of the
//! plane the product integrand is then bilinear, the radial part of the
//! Gaussian integral is an elementary closed moment, and only a smooth
//! angular integral remains, which composite Gauss-Legendre resolves to
//! machine precision.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum KernelError {
    #[error("covariance (c11 = {c11}, c12 = {c12}, c22 = {c22}) is not a positive semidefinite matrix")]
    NotPsd { c11: f64, c12: f64, c22: f64 },
    #[error("quadrature order {0} is below the minimum of 8")]
    InvalidOrder(usize),
}

/// Activation of the residual branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Abs,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Abs => x.abs(),
        }
    }

    /// Pointwise derivative, zero at the kink.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => {
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

    pub fn label(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Abs => "abs",
        }
    }

    pub fn piece(self) -> PieceLin {
        match self {
            Activation::Identity => PieceLin::identity(),
            Activation::Relu => PieceLin::relu(),
            Activation::Abs => PieceLin::abs_val(),
        }
    }

    pub fn deriv_piece(self) -> PieceLin {
        match self {
            Activation::Identity => PieceLin::one(),
            Activation::Relu => PieceLin::step(),
            Activation::Abs => PieceLin::sign(),
        }
    }
}

/// Scalar function that is linear on each side of zero, the shape shared by
/// every activation and activation derivative this crate integrates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PieceLin {
    pub left_value: f64,
    pub left_slope: f64,
    pub right_value: f64,
    pub right_slope: f64,
    /// Value at exactly zero; only matters under a point mass at the origin.
    pub at_zero: f64,
}

impl PieceLin {
    pub fn identity() -> Self {
        PieceLin { left_value: 0.0, left_slope: 1.0, right_value: 0.0, right_slope: 1.0, at_zero: 0.0 }
    }

    pub fn one() -> Self {
        PieceLin { left_value: 1.0, left_slope: 0.0, right_value: 1.0, right_slope: 0.0, at_zero: 1.0 }
    }

    pub fn relu() -> Self {
        PieceLin { left_value: 0.0, left_slope: 0.0, right_value: 0.0, right_slope: 1.0, at_zero: 0.0 }
    }

    pub fn abs_val() -> Self {
        PieceLin { left_value: 0.0, left_slope: -1.0, right_value: 0.0, right_slope: 1.0, at_zero: 0.0 }
    }

    /// Heaviside step with `step(0) = 0`, the relu derivative.
    pub fn step() -> Self {
        PieceLin { left_value: 0.0, left_slope: 0.0, right_value: 1.0, right_slope: 0.0, at_zero: 0.0 }
    }

    /// Sign with `sign(0) = 0`, the absolute value derivative.
    pub fn sign() -> Self {
        PieceLin { left_value: -1.0, left_slope: 0.0, right_value: 1.0, right_slope: 0.0, at_zero: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.right_value + self.right_slope * x
        } else if x < 0.0 {
            self.left_value + self.left_slope * x
        } else {
            self.at_zero
        }
    }
}

/// Covariance of one bivariate Gaussian pair `(z, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussPair {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
}

impl GaussPair {
    pub fn new(c11: f64, c12: f64, c22: f64) -> Result<Self, KernelError> {
        GaussPair { c11, c12, c22 }.sanitized()
    }

    /// Validate positive semidefiniteness up to roundoff and clamp the
    /// roundoff away: diagonal entries and the smallest eigenvalue may dip to
    /// `-1e-12` (relative to the matrix scale) and are treated as zero; below
    /// that the matrix is rejected as indefinite.
    pub fn sanitized(self) -> Result<Self, KernelError> {
        let bad = Err(KernelError::NotPsd { c11: self.c11, c12: self.c12, c22: self.c22 });
        if !(self.c11.is_finite() && self.c12.is_finite() && self.c22.is_finite()) {
            return bad;
        }
        let scale = 1.0f64.max(self.c11.abs()).max(self.c22.abs()).max(self.c12.abs());
        let tol = 1e-12 * scale;
        if self.c11 < -tol || self.c22 < -tol {
            return bad;
        }
        let c11 = self.c11.max(0.0);
        let c22 = self.c22.max(0.0);
        let disc = ((c11 - c22).powi(2) + 4.0 * self.c12 * self.c12).sqrt();
        if 0.5 * (c11 + c22 - disc) < -tol {
            return bad;
        }
        let cap = (c11 * c22).sqrt();
        Ok(GaussPair { c11, c12: self.c12.clamp(-cap, cap), c22 })
    }

    /// Correlation, clamped to `[-1, 1]`; zero when either variance vanishes.
    pub fn rho(&self) -> f64 {
        if self.c11 <= 0.0 || self.c22 <= 0.0 {
            0.0
        } else {
            (self.c12 / (self.c11 * self.c22).sqrt()).clamp(-1.0, 1.0)
        }
    }
}

/// Nodes and weights of `n`-point Gauss-Legendre quadrature on `[-1, 1]`,
/// found by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "at least two nodes");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * cur - (kf - 1.0) * prev) / kf;
        prev = cur;
        cur = next;
    }
    let dp = n as f64 * (x * cur - prev) / (x * x - 1.0);
    (cur, dp)
}

/// Sub-panels per quadrant; enough Gauss-Legendre resolution to keep even the
/// narrow angular ridge at correlations near one converged past 1e-12.
const PANELS: usize = 8;

/// `E[f(z) g(y)]` for `(z, y) ~ N(0, g_pair)` by quadrature.
///
/// On each quadrant the integrand is bilinear in `(z, y)`, so in polar
/// coordinates the radial integral reduces to closed Gaussian moments and the
/// angular integral is smooth; `order` is the Gauss-Legendre node count per
/// angular sub-panel. Point-mass and rank-one covariances reduce to
/// elementary one-dimensional Gaussian moments. Indefinite covariance is a
/// domain error.
pub fn v_quadrature(f: &PieceLin, g: &PieceLin, pair: GaussPair, order: usize) -> Result<f64, KernelError> {
    if order < 8 {
        return Err(KernelError::InvalidOrder(order));
    }
    let pair = pair.sanitized()?;
    if pair.c11 == 0.0 && pair.c22 == 0.0 {
        return Ok(f.eval(0.0) * g.eval(0.0));
    }
    if pair.c11 == 0.0 {
        return Ok(f.eval(0.0) * gaussian_mean(g, pair.c22));
    }
    if pair.c22 == 0.0 {
        return Ok(gaussian_mean(f, pair.c11) * g.eval(0.0));
    }
    let det = pair.c11 * pair.c22 - pair.c12 * pair.c12;
    if det <= 1e-12 * pair.c11 * pair.c22 {
        return Ok(rank_one_moment(f, g, &pair));
    }

    let (nodes, weights) = gauss_legendre(order);
    let inv_det = 1.0 / det;
    let r1_const = FRAC_PI_2.sqrt();
    let mut total = 0.0;
    for quadrant in 0..4 {
        let z_pos = quadrant == 0 || quadrant == 3;
        let y_pos = quadrant < 2;
        let (f0, f1) = if z_pos { (f.right_value, f.right_slope) } else { (f.left_value, f.left_slope) };
        let (g0, g1) = if y_pos { (g.right_value, g.right_slope) } else { (g.left_value, g.left_slope) };
        if f0 == 0.0 && f1 == 0.0 || g0 == 0.0 && g1 == 0.0 {
            continue;
        }
        let start = quadrant as f64 * FRAC_PI_2;
        for panel in 0..PANELS {
            let width = FRAC_PI_2 / PANELS as f64;
            let mid = start + (panel as f64 + 0.5) * width;
            let half = 0.5 * width;
            for (&x, &w) in nodes.iter().zip(&weights) {
                let (sin_t, cos_t) = (mid + half * x).sin_cos();
                // Radial exponent: the density is exp(-q r^2 / 2) in polar
                // coordinates, so moments of r are closed in q.
                let q = (pair.c22 * cos_t * cos_t - 2.0 * pair.c12 * cos_t * sin_t
                    + pair.c11 * sin_t * sin_t)
                    * inv_det;
                let r0 = 1.0 / q;
                let r1 = r1_const / (q * q.sqrt());
                let r2 = 2.0 / (q * q);
                let integrand =
                    f0 * g0 * r0 + (f0 * g1 * sin_t + f1 * g0 * cos_t) * r1 + f1 * g1 * sin_t * cos_t * r2;
                total += w * half * integrand;
            }
        }
    }
    Ok(total / (2.0 * PI * det.sqrt()))
}

/// `E[f(y)]` for `y ~ N(0, var)`, `var > 0`.
fn gaussian_mean(f: &PieceLin, var: f64) -> f64 {
    let sigma = var.sqrt();
    0.5 * (f.left_value + f.right_value) + (f.right_slope - f.left_slope) * sigma / (2.0 * PI).sqrt()
}

/// `E[f(z) g(k z)]` on the degenerate line `y = k z` of a rank-one pair.
fn rank_one_moment(f: &PieceLin, g: &PieceLin, pair: &GaussPair) -> f64 {
    let k = pair.c12 / pair.c11;
    let m1 = pair.c11.sqrt() / (2.0 * PI).sqrt();
    let m2 = 0.5 * pair.c11;
    let mut total = 0.0;
    for z_pos in [true, false] {
        let (f0, f1) = if z_pos { (f.right_value, f.right_slope) } else { (f.left_value, f.left_slope) };
        let y_pos = z_pos == (k > 0.0);
        let (g0, g1) = if y_pos { (g.right_value, g.right_slope) } else { (g.left_value, g.left_slope) };
        let m1_signed = if z_pos { m1 } else { -m1 };
        total += f0 * g0 * 0.5 + (f1 * g0 + f0 * g1 * k) * m1_signed + f1 * g1 * k * m2;
    }
    total
}

/// Covariance of the centered activations, `Cov(phi(z), phi(y))`.
///
/// For relu and abs these are the classical arcsine-law moments of a
/// bivariate Gaussian; a zero variance makes the activation value constant
/// and the covariance vanish.
pub fn v_phi_c(phi: Activation, pair: &GaussPair) -> f64 {
    if let Activation::Identity = phi {
        return pair.c12;
    }
    if pair.c11 <= 0.0 || pair.c22 <= 0.0 {
        return 0.0;
    }
    let s = (pair.c11 * pair.c22).sqrt();
    let rho = pair.rho();
    let root = (1.0 - rho * rho).max(0.0).sqrt();
    match phi {
        Activation::Identity => unreachable!(),
        Activation::Relu => s / (2.0 * PI) * (root + rho * (FRAC_PI_2 + rho.asin()) - 1.0),
        Activation::Abs => 2.0 * s / PI * (root + rho * rho.asin() - 1.0),
    }
}

/// Pairing of the activation derivatives, `E[phi'(z) phi'(y)]`.
pub fn v_phi_prime(phi: Activation, pair: &GaussPair) -> f64 {
    if let Activation::Identity = phi {
        return 1.0;
    }
    if pair.c11 <= 0.0 || pair.c22 <= 0.0 {
        return 0.0;
    }
    let asin_rho = pair.rho().asin();
    match phi {
        Activation::Identity => unreachable!(),
        Activation::Relu => 0.25 + asin_rho / (2.0 * PI),
        Activation::Abs => 2.0 * asin_rho / PI,
    }
}

/// Which derivative pairing weights the backward passthrough correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VcPrimeVariant {
    /// Plain derivative pairing `E[phi'(z) phi'(y)]`. The mean subtraction
    /// inside a block only removes rank-one mass, so this is the pairing the
    /// wide network realizes, and the one that reduces exactly to the linear
    /// dynamics at the identity activation.
    #[default]
    PrimePairing,
    /// Centered pairing `Cov(phi'(z), phi'(y))`, kept selectable for
    /// comparison runs.
    Literal,
}

/// Backward passthrough pairing under the chosen variant.
pub fn v_c_prime(phi: Activation, pair: &GaussPair, variant: VcPrimeVariant) -> f64 {
    match variant {
        VcPrimeVariant::PrimePairing => v_phi_prime(phi, pair),
        VcPrimeVariant::Literal => match phi {
            // The identity derivative is constant, the abs derivative has
            // zero mean, so only relu picks up a centering shift.
            Activation::Identity => 0.0,
            Activation::Abs => v_phi_prime(phi, pair),
            Activation::Relu => {
                if pair.c11 <= 0.0 || pair.c22 <= 0.0 {
                    0.0
                } else {
                    pair.rho().asin() / (2.0 * PI)
                }
            }
        },
    }
}

/// The three pairing kernels of one activation, with the quadrature order and
/// passthrough variant pinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VKernelSet {
    pub phi: Activation,
    pub variant: VcPrimeVariant,
    pub order: usize,
}

impl VKernelSet {
    pub fn new(phi: Activation) -> Self {
        VKernelSet { phi, variant: VcPrimeVariant::default(), order: 64 }
    }

    pub fn v_phi_c(&self, pair: &GaussPair) -> f64 {
        v_phi_c(self.phi, pair)
    }

    pub fn v_phi_prime(&self, pair: &GaussPair) -> f64 {
        v_phi_prime(self.phi, pair)
    }

    pub fn v_c_prime(&self, pair: &GaussPair) -> f64 {
        v_c_prime(self.phi, pair, self.variant)
    }

    /// Quadrature route for the centered activation covariance:
    /// `E[phi phi] - E[phi] E[phi]`.
    pub fn v_phi_c_quadrature(&self, pair: GaussPair) -> Result<f64, KernelError> {
        let p = self.phi.piece();
        let raw = v_quadrature(&p, &p, pair, self.order)?;
        let mean_z = v_quadrature(&p, &PieceLin::one(), pair, self.order)?;
        let mean_y = v_quadrature(&PieceLin::one(), &p, pair, self.order)?;
        Ok(raw - mean_z * mean_y)
    }

    /// Quadrature route for the derivative pairing.
    pub fn v_phi_prime_quadrature(&self, pair: GaussPair) -> Result<f64, KernelError> {
        let d = self.phi.deriv_piece();
        v_quadrature(&d, &d, pair, self.order)
    }

    /// Quadrature route for the backward passthrough pairing under the
    /// configured variant.
    pub fn v_c_prime_quadrature(&self, pair: GaussPair) -> Result<f64, KernelError> {
        let raw = self.v_phi_prime_quadrature(pair)?;
        match self.variant {
            VcPrimeVariant::PrimePairing => Ok(raw),
            VcPrimeVariant::Literal => {
                let d = self.phi.deriv_piece();
                let mean_z = v_quadrature(&d, &PieceLin::one(), pair, self.order)?;
                let mean_y = v_quadrature(&PieceLin::one(), &d, pair, self.order)?;
                Ok(raw - mean_z * mean_y)
            }
        }
    }

    /// Closed-form kernel values over a list of covariances as CSV:
    /// `phi,c11,c22,c12,v_c,v_prime,v_c_prime`.
    pub fn write_table_csv<P: AsRef<Path>>(&self, path: P, pairs: &[GaussPair]) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "phi,c11,c22,c12,v_c,v_prime,v_c_prime")?;
        for pair in pairs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.phi.label(),
                fmt(pair.c11),
                fmt(pair.c22),
                fmt(pair.c12),
                fmt(self.v_phi_c(pair)),
                fmt(self.v_phi_prime(pair)),
                fmt(self.v_c_prime(pair)),
            )?;
        }
        w.flush()
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_low_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(16);
        let total: f64 = weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let quadratic: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
        assert!((quadratic - 2.0 / 3.0).abs() < 1e-14);
        let seventh: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(7)).sum();
        assert!(seventh.abs() < 1e-14);
    }

    #[test]
    fn quadrature_preserves_total_mass() {
        let one = PieceLin::one();
        for &(c11, c12, c22) in &[(1.0, 0.0, 1.0), (2.0, 0.7, 0.5), (1.0, -0.99, 1.0)] {
            let pair = GaussPair { c11, c12, c22 };
            let mass = v_quadrature(&one, &one, pair, 64).unwrap();
            assert!((mass - 1.0).abs() < 1e-12, "mass {mass} for {pair:?}");
        }
    }

    #[test]
    fn sanitize_clamps_roundoff_and_rejects_indefinite() {
        let near = GaussPair { c11: 1.0, c12: 1.0 + 1e-14, c22: 1.0 }.sanitized().unwrap();
        assert!(near.c12 <= 1.0);
        assert_eq!(near.rho(), 1.0);
        let tiny_neg = GaussPair { c11: -1e-13, c12: 0.0, c22: 1.0 }.sanitized().unwrap();
        assert_eq!(tiny_neg.c11, 0.0);
        assert!(GaussPair { c11: 1.0, c12: 2.0, c22: 1.0 }.sanitized().is_err());
        assert!(GaussPair { c11: -1.0, c12: 0.0, c22: 1.0 }.sanitized().is_err());
        assert!(v_quadrature(&PieceLin::one(), &PieceLin::one(), GaussPair { c11: 1.0, c12: 2.0, c22: 1.0 }, 64).is_err());
    }

    #[test]
    fn low_orders_are_refused() {
        let err = v_quadrature(&PieceLin::one(), &PieceLin::one(), GaussPair { c11: 1.0, c12: 0.0, c22: 1.0 }, 4);
        assert!(matches!(err, Err(KernelError::InvalidOrder(4))));
    }

    #[test]
    fn piecewise_evaluation_matches_activations() {
        for phi in [Activation::Identity, Activation::Relu, Activation::Abs] {
            let p = phi.piece();
            let d = phi.deriv_piece();
            for x in [-2.5, -0.1, 0.0, 0.3, 4.0] {
                assert_eq!(p.eval(x), phi.eval(x), "{phi:?} at {x}");
                assert_eq!(d.eval(x), phi.deriv(x), "{phi:?} derivative at {x}");
            }
        }
    }
}
