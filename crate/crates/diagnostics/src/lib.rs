//! Measurement layer: turns order-of-growth claims about deep residual
//! networks into fitted log-log exponents with explicit tolerances.
//!
//! Estimators here are pure functions of their input snapshots or grids;
//! anything Monte-Carlo draws from per-trial seeded streams and reduces in a
//! fixed order, so results are bit-reproducible regardless of thread count.
//! Each diagnostic can emit one CSV of its raw curve plus a JSON summary
//! carrying the fitted exponent and a pass/fail verdict against a configured
//! expectation band.

pub mod deltaf;
pub mod diversity;
pub mod grids;
pub mod linearize;
pub mod warmup;

use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use deltaf::{deltaf_curve, deltaf_exponent, DeltafEngine};
pub use diversity::{feature_diversity_exponent, pow2_eps_grid, DiversityReport};
pub use grids::{sublevel_slope, transfer_shift, write_sublevel_csv, write_transfer_csv, TransferReport};
pub use linearize::linearization_residual;
pub use warmup::{warmup_al_curve, warmup_al_scaling, warmup_exact_second_moment, WarmupRule};

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("{0}")]
    Domain(&'static str),
    #[error(transparent)]
    Limit(#[from] tp_linear_limit::LimitError),
    #[error(transparent)]
    Nonlinear(#[from] tp_nonlinear_limit::NonlinearError),
    #[error(transparent)]
    Sim(#[from] resnet_sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Least-squares line through (log x, log y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    /// Slope on log-log axes.
    pub exponent: f64,
    /// Intercept on log-log axes (log of the prefactor).
    pub intercept: f64,
    /// Coefficient of determination, clamped to [0, 1].
    pub r2: f64,
    pub n_points: usize,
}

/// Target band for a fitted exponent, used in JSON summaries.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Expectation {
    pub target: f64,
    pub tolerance: f64,
}

impl Expectation {
    pub fn new(target: f64, tolerance: f64) -> Self {
        Self { target, tolerance }
    }

    pub fn holds(&self, exponent: f64) -> bool {
        (exponent - self.target).abs() <= self.tolerance
    }
}

/// Fits `y = c * x^e` by least squares on (log x, log y) and reports the
/// slope `e`. Requires at least two points, all strictly positive and finite.
pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<PowerLawFit, DiagError> {
    if pairs.len() < 2 {
        return Err(DiagError::Domain("power-law fit needs at least 2 points"));
    }
    for &(x, y) in pairs {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(DiagError::Domain("power-law fit needs positive finite points"));
        }
    }
    let n = pairs.len() as f64;
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let sxy = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    if sxx <= 0.0 {
        return Err(DiagError::Domain("power-law fit needs at least two distinct x values"));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot = logs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum::<f64>();
    let ss_res = logs
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + exponent * p.0);
            r * r
        })
        .sum::<f64>();
    // A constant y has zero total variance and is fit exactly by slope 0.
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PowerLawFit { exponent, intercept, r2, n_points: pairs.len() })
}

/// Writes a two-column CSV of raw curve points, 17 significant digits.
pub fn write_xy_csv(
    path: &Path,
    x_label: &str,
    y_label: &str,
    rows: &[(f64, f64)],
) -> Result<(), DiagError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{x_label},{y_label}")?;
    for &(x, y) in rows {
        writeln!(out, "{x:.16e},{y:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    name: &'a str,
    exponent: f64,
    intercept: f64,
    r2: f64,
    n_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<bool>,
}

/// Writes a JSON summary of a fit, with a pass/fail verdict when an
/// expectation band is given.
pub fn write_fit_summary(
    path: &Path,
    name: &str,
    fit: &PowerLawFit,
    expectation: Option<Expectation>,
) -> Result<(), DiagError> {
    let summary = FitSummary {
        name,
        exponent: fit.exponent,
        intercept: fit.intercept,
        r2: fit.r2,
        n_points: fit.n_points,
        target: expectation.map(|e| e.target),
        tolerance: expectation.map(|e| e.tolerance),
        pass: expectation.map(|e| e.holds(fit.exponent)),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &summary).map_err(std::io::Error::from)?;
    out.flush()?;
    Ok(())
}
