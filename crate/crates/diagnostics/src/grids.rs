//! Grid readouts over hyperparameter sweeps: learning-rate transfer across
//! depth, and the slope of the near-optimal set in a (log lr, log a) plane.

use crate::{DiagError, Expectation};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Default near-optimal quantile for [`sublevel_slope`].
pub const SUBLEVEL_QUANTILE: f64 = 0.1;

/// Per-depth best learning rate and how far it drifts across depths.
#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    /// Index into the LR grid of each row's smallest loss; `None` marks a
    /// row with no finite entry.
    pub argmin: Vec<Option<usize>>,
    /// Largest |argmin difference| between consecutive usable rows, in grid
    /// steps.
    pub max_shift_steps: usize,
    /// Rows excluded because every loss was NaN.
    pub excluded_rows: Vec<usize>,
}

/// Finds the best LR per depth row and the worst shift between consecutive
/// depths. `losses[row][j]` is the final loss at `lr_grid[j]`. NaN cells are
/// treated as +inf; ties break toward the smaller learning rate.
pub fn transfer_shift(losses: &[Vec<f64>], lr_grid: &[f64]) -> Result<TransferReport, DiagError> {
    if losses.len() < 2 {
        return Err(DiagError::Domain("transfer needs at least 2 depth rows"));
    }
    if lr_grid.len() < 2 || lr_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DiagError::Domain("transfer LR grid must be strictly increasing, len >= 2"));
    }
    if losses.iter().any(|row| row.len() != lr_grid.len()) {
        return Err(DiagError::Domain("transfer rows must match the LR grid length"));
    }

    let mut argmin = Vec::with_capacity(losses.len());
    let mut excluded = Vec::new();
    for (r, row) in losses.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &loss) in row.iter().enumerate() {
            if loss.is_nan() {
                continue;
            }
            if best.map_or(true, |(_, b)| loss < b) {
                best = Some((j, loss));
            }
        }
        match best {
            Some((j, _)) => argmin.push(Some(j)),
            None => {
                argmin.push(None);
                excluded.push(r);
            }
        }
    }

    let surviving: Vec<usize> = argmin.iter().filter_map(|a| *a).collect();
    if surviving.len() < 2 {
        return Err(DiagError::Domain("transfer needs at least 2 rows with a finite loss"));
    }
    let max_shift_steps = surviving
        .windows(2)
        .map(|w| w[0].abs_diff(w[1]))
        .max()
        .expect("at least one consecutive pair");
    Ok(TransferReport { argmin, max_shift_steps, excluded_rows: excluded })
}

impl TransferReport {
    pub fn write_summary_json(
        &self,
        path: &Path,
        max_allowed: Option<usize>,
    ) -> Result<(), DiagError> {
        #[derive(Serialize)]
        struct Summary<'a> {
            argmin: &'a [Option<usize>],
            max_shift_steps: usize,
            excluded_rows: &'a [usize],
            #[serde(skip_serializing_if = "Option::is_none")]
            max_allowed: Option<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            pass: Option<bool>,
        }
        let summary = Summary {
            argmin: &self.argmin,
            max_shift_steps: self.max_shift_steps,
            excluded_rows: &self.excluded_rows,
            max_allowed,
            pass: max_allowed.map(|m| self.max_shift_steps <= m),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &summary).map_err(std::io::Error::from)?;
        out.flush()?;
        Ok(())
    }
}

/// One row per sweep cell: `depth,lr,loss,is_argmin`.
pub fn write_transfer_csv(
    path: &Path,
    depths: &[f64],
    lr_grid: &[f64],
    losses: &[Vec<f64>],
    report: &TransferReport,
) -> Result<(), DiagError> {
    if depths.len() != losses.len() || report.argmin.len() != losses.len() {
        return Err(DiagError::Domain("transfer CSV inputs must have one label per row"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "depth,lr,loss,is_argmin")?;
    for ((&depth, row), &am) in depths.iter().zip(losses).zip(&report.argmin) {
        for (j, (&lr, &loss)) in lr_grid.iter().zip(row).enumerate() {
            let flag = (am == Some(j)) as u8;
            writeln!(out, "{depth},{lr:.16e},{loss:.16e},{flag}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Near-optimal set of a loss heatmap and the line through it.
#[derive(Debug, Clone, Serialize)]
pub struct SublevelFit {
    /// Slope of log2(a) against log2(lr) over the selected cells.
    pub slope: f64,
    /// Loss value at the selection quantile; cells at or below it are kept.
    pub threshold: f64,
    pub quantile: f64,
    /// Selected cells as (lr index, a index).
    pub selected: Vec<(usize, usize)>,
}

/// Selects the cells whose loss sits in the lowest `quantile` of all finite
/// cells (ties at the threshold included) and fits a line through their
/// (log2 lr, log2 a) coordinates. `losses[i][j]` corresponds to
/// `(lr_log2[i], a_log2[j])`.
pub fn sublevel_fit(
    losses: &[Vec<f64>],
    lr_log2: &[f64],
    a_log2: &[f64],
    quantile: f64,
) -> Result<SublevelFit, DiagError> {
    if lr_log2.len() < 4 || a_log2.len() < 4 {
        return Err(DiagError::Domain("sublevel grid must be at least 4x4"));
    }
    if losses.len() != lr_log2.len() || losses.iter().any(|row| row.len() != a_log2.len()) {
        return Err(DiagError::Domain("sublevel heatmap must match the grid shape"));
    }
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(DiagError::Domain("sublevel quantile must be in (0, 0.5]"));
    }

    let mut finite: Vec<f64> =
        losses.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(DiagError::Domain("sublevel heatmap has fewer than 2 finite cells"));
    }
    finite.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // Guard the ceil against representation error when quantile * count is
    // an exact integer.
    let k = ((quantile * finite.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = finite[k - 1];

    let mut selected = Vec::new();
    for (i, row) in losses.iter().enumerate() {
        for (j, &loss) in row.iter().enumerate() {
            if loss.is_finite() && loss <= threshold {
                selected.push((i, j));
            }
        }
    }
    if selected.len() < 2 {
        return Err(DiagError::Domain("sublevel selection kept fewer than 2 cells"));
    }

    let n = selected.len() as f64;
    let mx = selected.iter().map(|&(i, _)| lr_log2[i]).sum::<f64>() / n;
    let my = selected.iter().map(|&(_, j)| a_log2[j]).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(i, j) in &selected {
        let dx = lr_log2[i] - mx;
        sxx += dx * dx;
        sxy += dx * (a_log2[j] - my);
    }
    if sxx <= 1e-12 * n {
        return Err(DiagError::Domain("sublevel set is vertical; slope is undefined"));
    }
    Ok(SublevelFit { slope: sxy / sxx, threshold, quantile, selected })
}

/// Slope of the near-optimal set; see [`sublevel_fit`].
pub fn sublevel_slope(
    losses: &[Vec<f64>],
    lr_log2: &[f64],
    a_log2: &[f64],
    quantile: f64,
) -> Result<f64, DiagError> {
    Ok(sublevel_fit(losses, lr_log2, a_log2, quantile)?.slope)
}

/// One row per heatmap cell: `lr_log2,a_log2,loss,selected`.
pub fn write_sublevel_csv(
    path: &Path,
    lr_log2: &[f64],
    a_log2: &[f64],
    losses: &[Vec<f64>],
    fit: &SublevelFit,
) -> Result<(), DiagError> {
    if losses.len() != lr_log2.len() || losses.iter().any(|row| row.len() != a_log2.len()) {
        return Err(DiagError::Domain("sublevel heatmap must match the grid shape"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "lr_log2,a_log2,loss,selected")?;
    for (i, row) in losses.iter().enumerate() {
        for (j, &loss) in row.iter().enumerate() {
            let flag = fit.selected.contains(&(i, j)) as u8;
            writeln!(out, "{},{},{loss:.16e},{flag}", lr_log2[i], a_log2[j])?;
        }
    }
    out.flush()?;
    Ok(())
}

impl SublevelFit {
    pub fn write_summary_json(
        &self,
        path: &Path,
        expectation: Option<Expectation>,
    ) -> Result<(), DiagError> {
        #[derive(Serialize)]
        struct Summary {
            slope: f64,
            threshold: f64,
            quantile: f64,
            n_selected: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            target: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            tolerance: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            pass: Option<bool>,
        }
        let summary = Summary {
            slope: self.slope,
            threshold: self.threshold,
            quantile: self.quantile,
            n_selected: self.selected.len(),
            target: expectation.map(|e| e.target),
            tolerance: expectation.map(|e| e.tolerance),
            pass: expectation.map(|e| e.holds(self.slope)),
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

    fn grid7() -> (Vec<f64>, Vec<f64>) {
        let lr: Vec<f64> = (-3..=3).map(|i| i as f64 / 2.0).collect();
        let a: Vec<f64> = (-3..=3).map(|i| i as f64).collect();
        (lr, a)
    }

    fn bowl(lr: &[f64], a: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
        lr.iter().map(|&x| a.iter().map(|&y| f(x, y)).collect()).collect()
    }

    #[test]
    fn steep_bowl_has_slope_minus_two() {
        let (lr, a) = grid7();
        let losses = bowl(&lr, &a, |x, y| (y + 2.0 * x) * (y + 2.0 * x));
        let fit = sublevel_fit(&losses, &lr, &a, SUBLEVEL_QUANTILE).unwrap();
        // Every lr has an exact zero at a = -2 lr, and the 10% quantile of
        // 49 cells is the 5th smallest, which is still one of those zeros;
        // tie inclusion keeps all seven.
        assert_eq!(fit.threshold, 0.0);
        assert_eq!(fit.selected.len(), 7);
        assert!((fit.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn shallow_bowl_has_slope_minus_one() {
        let (lr, a) = grid7();
        let losses = bowl(&lr, &a, |x, y| (y + x) * (y + x));
        let fit = sublevel_fit(&losses, &lr, &a, SUBLEVEL_QUANTILE).unwrap();
        // Integer a only meets a = -lr at integer lr (3 zeros); the
        // threshold then sits at 0.25, whose 8 cells straddle the valley
        // symmetrically, so the fitted slope is still exact.
        assert_eq!(fit.selected.len(), 11);
        assert!((fit.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_valley_is_rejected() {
        let (lr, a) = grid7();
        let losses = bowl(&lr, &a, |x, _| x * x);
        assert!(matches!(
            sublevel_fit(&losses, &lr, &a, SUBLEVEL_QUANTILE),
            Err(DiagError::Domain(_))
        ));
    }

    #[test]
    fn sublevel_validation() {
        let (lr, a) = grid7();
        let losses = bowl(&lr, &a, |x, y| x + y);
        assert!(sublevel_fit(&losses[..3], &lr[..3], &a, 0.1).is_err());
        assert!(sublevel_fit(&losses, &lr, &a, 0.0).is_err());
        assert!(sublevel_fit(&losses, &lr, &a, 0.6).is_err());
        let mut ragged = losses.clone();
        ragged[2].pop();
        assert!(sublevel_fit(&ragged, &lr, &a, 0.1).is_err());
    }

    #[test]
    fn identical_rows_transfer_with_zero_shift() {
        let lr = [1e-4, 2e-4, 4e-4, 8e-4];
        let row = vec![0.9, 0.3, 0.5, 0.7];
        let losses = vec![row.clone(), row.clone(), row];
        let report = transfer_shift(&losses, &lr).unwrap();
        assert_eq!(report.argmin, vec![Some(1), Some(1), Some(1)]);
        assert_eq!(report.max_shift_steps, 0);
        assert!(report.excluded_rows.is_empty());
    }

    #[test]
    fn one_cell_drift_per_doubling() {
        let lr = [1.0, 2.0, 4.0, 8.0, 16.0];
        let losses: Vec<Vec<f64>> = (0..4)
            .map(|r| (0..5).map(|j| (j as f64 - r as f64).abs()).collect())
            .collect();
        let report = transfer_shift(&losses, &lr).unwrap();
        assert_eq!(report.argmin, vec![Some(0), Some(1), Some(2), Some(3)]);
        assert_eq!(report.max_shift_steps, 1);
    }

    #[test]
    fn nan_rows_are_excluded_and_ties_prefer_smaller_lr() {
        let lr = [1.0, 2.0, 4.0];
        let losses = vec![
            vec![0.5, 0.5, 0.9],
            vec![f64::NAN, f64::NAN, f64::NAN],
            vec![f64::NAN, 0.4, 0.4],
        ];
        let report = transfer_shift(&losses, &lr).unwrap();
        assert_eq!(report.argmin, vec![Some(0), None, Some(1)]);
        assert_eq!(report.excluded_rows, vec![1]);
        // Rows 0 and 2 are the consecutive surviving pair.
        assert_eq!(report.max_shift_steps, 1);
    }

    #[test]
    fn transfer_needs_two_usable_rows() {
        let lr = [1.0, 2.0];
        let losses = vec![vec![0.1, 0.2], vec![f64::NAN, f64::NAN]];
        assert!(matches!(transfer_shift(&losses, &lr), Err(DiagError::Domain(_))));
    }
}
