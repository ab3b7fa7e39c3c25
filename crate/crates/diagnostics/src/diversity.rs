//! Feature-diversity exponent: how fast the residual stream decorrelates
//! across depth.
//!
//! Given per-layer snapshots x^0..x^L of the stream (width n, batch B), the
//! curve d(eps) = ||x^{floor((lambda+eps)L)} - x^{floor(lambda L)}|| / sqrt(n)
//! averaged over the batch is fit as a power law in eps. A slope of 1/2 means
//! Brownian-rough, maximally diverse depth profiles; a slope near 1 means
//! smooth, redundant ones. kappa = 1 - slope.

use crate::{fit_power_law, DiagError, Expectation};
use ndarray::Array2;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Fitted d(eps) curve. `eps_grid`, `layer_indices`, and `d_curve` keep only
/// the surviving points (duplicate layer indices are dropped and counted).
#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    /// Anchor fraction in [0, 1].
    pub lambda: f64,
    /// Anchor layer index floor(lambda * L).
    pub anchor_layer: usize,
    pub eps_grid: Vec<f64>,
    pub layer_indices: Vec<usize>,
    /// Batch-averaged ||x^{l(eps)} - x^{anchor}|| / sqrt(n), one per eps.
    pub d_curve: Vec<f64>,
    /// Slope of log d vs log eps.
    pub fitted_exponent: f64,
    pub kappa_hat: f64,
    /// Points removed because their layer index collided with the anchor or
    /// an earlier point.
    pub dropped_points: usize,
}

/// The grid eps_j = 2^j / depth for j = 0..count, so every (lambda+eps)L is
/// an exact integer offset and small-eps bins never collapse.
pub fn pow2_eps_grid(depth: usize, count: usize) -> Vec<f64> {
    (0..count).map(|j| (1u64 << j) as f64 / depth as f64).collect()
}

/// Computes the diversity curve and exponent from layer snapshots
/// `layers[l]` of shape (n, B) for l = 0..=L.
pub fn feature_diversity_exponent(
    layers: &[Array2<f64>],
    lambda: f64,
    eps_grid: &[f64],
) -> Result<DiversityReport, DiagError> {
    if layers.len() < 2 {
        return Err(DiagError::Domain("diversity needs snapshots for at least 2 layers"));
    }
    let depth = layers.len() - 1;
    let (n, batch) = layers[0].dim();
    if n == 0 || batch == 0 {
        return Err(DiagError::Domain("diversity snapshots must be nonempty"));
    }
    if layers.iter().any(|x| x.dim() != (n, batch)) {
        return Err(DiagError::Domain("diversity snapshots must share one shape"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DiagError::Domain("diversity anchor fraction must be in [0, 1]"));
    }
    if eps_grid.is_empty() || eps_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DiagError::Domain("diversity eps grid must be strictly increasing"));
    }
    if eps_grid[0] <= 0.0 {
        return Err(DiagError::Domain("diversity eps values must be positive"));
    }
    let last = *eps_grid.last().expect("nonempty");
    if (lambda + last) * depth as f64 > depth as f64 * (1.0 + 1e-12) {
        return Err(DiagError::Domain("diversity eps grid exceeds the final layer"));
    }

    let anchor_layer = (lambda * depth as f64).floor() as usize;
    let mut eps_kept = Vec::with_capacity(eps_grid.len());
    let mut idx_kept = Vec::with_capacity(eps_grid.len());
    let mut d_curve = Vec::with_capacity(eps_grid.len());
    let mut dropped = 0usize;
    for &eps in eps_grid {
        let layer = (((lambda + eps) * depth as f64).floor() as usize).min(depth);
        if layer == anchor_layer || idx_kept.last() == Some(&layer) {
            dropped += 1;
            continue;
        }
        let diff = &layers[layer] - &layers[anchor_layer];
        let mut mean = 0.0;
        for col in diff.columns() {
            mean += col.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        mean /= (batch as f64) * (n as f64).sqrt();
        eps_kept.push(eps);
        idx_kept.push(layer);
        d_curve.push(mean);
    }
    if eps_kept.len() < 2 {
        return Err(DiagError::Domain("diversity needs at least 2 distinct layer offsets"));
    }

    let pairs: Vec<(f64, f64)> = eps_kept.iter().copied().zip(d_curve.iter().copied()).collect();
    let fit = fit_power_law(&pairs)?;
    Ok(DiversityReport {
        lambda,
        anchor_layer,
        eps_grid: eps_kept,
        layer_indices: idx_kept,
        d_curve,
        fitted_exponent: fit.exponent,
        kappa_hat: 1.0 - fit.exponent,
        dropped_points: dropped,
    })
}

impl DiversityReport {
    /// Raw curve plus the anchor-normalized copy (first point scaled to 1);
    /// fits always use the raw values, the scaled column is for plotting.
    pub fn write_csv(&self, path: &Path) -> Result<(), DiagError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "eps,layer,d,d_scaled")?;
        let scale = self.d_curve[0];
        for ((&eps, &layer), &d) in
            self.eps_grid.iter().zip(&self.layer_indices).zip(&self.d_curve)
        {
            writeln!(out, "{eps:.16e},{layer},{d:.16e},{:.16e}", d / scale)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_json(
        &self,
        path: &Path,
        expectation: Option<Expectation>,
    ) -> Result<(), DiagError> {
        #[derive(Serialize)]
        struct Summary {
            lambda: f64,
            anchor_layer: usize,
            exponent: f64,
            kappa_hat: f64,
            n_points: usize,
            dropped_points: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            target: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            tolerance: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            pass: Option<bool>,
        }
        let summary = Summary {
            lambda: self.lambda,
            anchor_layer: self.anchor_layer,
            exponent: self.fitted_exponent,
            kappa_hat: self.kappa_hat,
            n_points: self.eps_grid.len(),
            dropped_points: self.dropped_points,
            target: expectation.map(|e| e.target),
            tolerance: expectation.map(|e| e.tolerance),
            pass: expectation.map(|e| e.holds(self.fitted_exponent)),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &summary).map_err(std::io::Error::from)?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian_like(depth: usize, n: usize) -> Vec<Array2<f64>> {
        // x^l with independent increments of per-coordinate variance 1/depth:
        // d(eps) = sqrt(eps) exactly in expectation; use a deterministic
        // "increment" that realizes the norm exactly so the test is sharp.
        let mut layers = vec![Array2::zeros((n, 1))];
        for l in 1..=depth {
            let mut next = layers[l - 1].clone();
            // Orthogonal unit-norm increments: one new coordinate per layer.
            next[(l % n, 0)] += 1.0;
            layers.push(next);
        }
        layers
    }

    #[test]
    fn orthogonal_increments_give_square_root_growth() {
        // With one fresh orthogonal coordinate per layer (n > depth so they
        // never collide), ||x^{a+m} - x^a||^2 = m exactly, so
        // d(eps) = sqrt(eps * depth / n) and the exponent is exactly 1/2.
        let depth = 32;
        let layers = brownian_like(depth, depth + 1);
        let eps = pow2_eps_grid(depth, 5);
        let report = feature_diversity_exponent(&layers, 0.25, &eps).unwrap();
        assert!((report.fitted_exponent - 0.5).abs() < 1e-12);
        assert!((report.kappa_hat - 0.5).abs() < 1e-12);
        assert_eq!(report.dropped_points, 0);
        assert_eq!(report.anchor_layer, 8);
        assert_eq!(report.layer_indices, vec![9, 10, 12, 16, 24]);
    }

    #[test]
    fn duplicate_layer_offsets_are_dropped() {
        let depth = 8;
        let layers = brownian_like(depth, depth + 1);
        // eps below 1/L floors to the anchor layer; two eps in the same bin
        // collide with each other.
        let eps = [0.01, 0.13, 0.14, 0.3, 0.56];
        let report = feature_diversity_exponent(&layers, 0.0, &eps).unwrap();
        assert_eq!(report.dropped_points, 2);
        assert_eq!(report.layer_indices, vec![1, 2, 4]);
    }

    #[test]
    fn too_few_surviving_points_is_an_error() {
        let depth = 4;
        let layers = brownian_like(depth, depth + 1);
        assert!(matches!(
            feature_diversity_exponent(&layers, 0.0, &[0.05, 0.1]),
            Err(DiagError::Domain(_))
        ));
    }

    #[test]
    fn grid_validation_rejects_overflow_and_disorder() {
        let depth = 8;
        let layers = brownian_like(depth, depth + 1);
        assert!(feature_diversity_exponent(&layers, 0.5, &[0.25, 0.75]).is_err());
        assert!(feature_diversity_exponent(&layers, 0.0, &[0.5, 0.25]).is_err());
        assert!(feature_diversity_exponent(&layers, 1.5, &[0.1, 0.2]).is_err());
    }
}
