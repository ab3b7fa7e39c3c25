//! Per-step scalar records and their CSV encoding.

use crate::SimError;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Scalars captured during one training step, before the update is applied.
/// `layer_rms` holds the residual-stream RMS at depths `{0, L/4, L/2, 3L/4, L}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub f_norm: f64,
    pub chi_norm: f64,
    pub layer_rms: [f64; 5],
}

pub const STEP_LOG_HEADER: &str =
    "step,loss,f_norm,chi_norm,layer_rms_0,layer_rms_l4,layer_rms_l2,layer_rms_3l4,layer_rms_l";

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes records as CSV with [`STEP_LOG_HEADER`].
pub fn write_step_log(path: &Path, records: &[StepRecord]) -> Result<(), SimError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{STEP_LOG_HEADER}")?;
    for r in records {
        writeln!(out, "{}", record_line(r))?;
    }
    out.flush()?;
    Ok(())
}

fn record_line(r: &StepRecord) -> String {
    let mut fields = vec![r.step.to_string()];
    for v in [r.loss, r.f_norm, r.chi_norm] {
        fields.push(fmt_f64(v));
    }
    for v in r.layer_rms {
        fields.push(fmt_f64(v));
    }
    fields.join(",")
}

/// Parses a CSV produced by [`write_step_log`].
pub fn read_step_log(path: &Path) -> Result<Vec<StepRecord>, SimError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == STEP_LOG_HEADER => {}
        _ => return Err(SimError::Checkpoint("bad step log header".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(SimError::Checkpoint(format!("step log row {} has {} fields", i + 1, fields.len())));
        }
        let parse = |s: &str| -> Result<f64, SimError> {
            s.trim().parse().map_err(|_| SimError::Checkpoint(format!("bad float in step log row {}", i + 1)))
        };
        records.push(StepRecord {
            step: fields[0]
                .trim()
                .parse()
                .map_err(|_| SimError::Checkpoint(format!("bad step index in row {}", i + 1)))?,
            loss: parse(fields[1])?,
            f_norm: parse(fields[2])?,
            chi_norm: parse(fields[3])?,
            layer_rms: [
                parse(fields[4])?,
                parse(fields[5])?,
                parse(fields[6])?,
                parse(fields[7])?,
                parse(fields[8])?,
            ],
        });
    }
    Ok(records)
}
