//! Sweep execution. Every cell of the `depth x lr x a x seed` grid runs the
//! configured engine; rows come back in sorted `(depth, lr, a, seed)` order
//! regardless of how the worker pool scheduled them, and a cell failure
//! becomes a NaN row with the error string instead of aborting the sweep.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use resnet_sim::steplog::fmt_f64;
use resnet_sim::{init, train_step};
use serde::{Deserialize, Serialize};
use tp_linear_limit::{run_generalized, LimitConfig};
use tp_nonlinear_limit::{run_nonlinear, Activation, NonlinearConfig};

use crate::config::{DatasetSpec, ExperimentKind, SweepConfig};
use crate::data::{load_dataset, Dataset};
use crate::seeds::cell_seed;
use crate::HarnessError;

/// One grid cell's result. `mean_slice_loss` averages the final
/// `slice_frac` of per-step losses; a failed cell reports NaN plus the
/// engine's error text.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub depth: usize,
    pub lr: f64,
    pub a: f64,
    pub seed_index: usize,
    pub cell_seed: u64,
    pub mean_slice_loss: f64,
    pub error: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str = "depth,lr,a,seed_index,cell_seed,mean_slice_loss,error";
pub const SWEEP_SCHEMA_VERSION: &str = "depthlab.sweep.v1";

/// Everything needed to reproduce a run bit for bit with the same binary
/// version: the full config echo, the master seed, and every derived cell
/// seed in row order. Timestamps and the float-environment note are
/// documentation, not inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub artifact_version: String,
    pub config: SweepConfig,
    pub master_seed: u64,
    /// Cell seeds in sorted `(depth, lr, a, seed)` row order.
    pub cell_seeds: Vec<u64>,
    pub threads: usize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub fp_note: String,
}

impl RunManifest {
    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Config(format!("manifest serialization: {e}")))?;
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{text}")?;
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("manifest parse: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub manifest: RunManifest,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn slice_mean(losses: &[f64], frac: f64) -> f64 {
    let k = ((losses.len() as f64 * frac).ceil() as usize).clamp(1, losses.len());
    let tail = &losses[losses.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

fn activation_of(phi: resnet_sim::Phi) -> Activation {
    match phi {
        resnet_sim::Phi::Identity => Activation::Identity,
        resnet_sim::Phi::Relu => Activation::Relu,
        resnet_sim::Phi::Abs => Activation::Abs,
    }
}

struct Cell {
    depth: usize,
    lr: f64,
    a: f64,
    seed_index: usize,
    seed: u64,
}

fn run_cell(cfg: &SweepConfig, dataset: &Dataset, cell: &Cell) -> SweepRow {
    let result: Result<f64, HarnessError> = (|| {
        let losses = match cfg.kind {
            ExperimentKind::Train => {
                let net = cfg.net.to_net_config(cell.depth, dataset.d_in(), dataset.d_out());
                let mut p = cfg.parametrization;
                p.eta = cell.lr;
                p.a = cell.a;
                let rule = cfg.optimizer.rule();
                let mut state = init(&net, &rule, cell.seed)?;
                let mut losses = Vec::with_capacity(cfg.steps);
                for t in 0..cfg.steps {
                    let batch = dataset.batch_for_step(t, cfg.batch_size);
                    let rec = train_step(&mut state, &p, &rule, &batch)?;
                    losses.push(rec.loss);
                }
                losses
            }
            ExperimentKind::LimitLinear => {
                let (inputs, targets) = dataset.scalar_stream(cfg.steps)?;
                let trace = run_generalized(&LimitConfig {
                    depth: cell.depth,
                    alpha: cfg.parametrization.alpha,
                    gamma: cfg.parametrization.gamma,
                    eta: cell.lr,
                    inputs,
                    targets,
                })?;
                trace.losses
            }
            ExperimentKind::LimitNonlinear => {
                let (inputs, targets) = dataset.scalar_stream(cfg.steps)?;
                let nl = NonlinearConfig::new(
                    cell.depth,
                    activation_of(cfg.net.phi),
                    cell.lr,
                    &inputs,
                    &targets,
                );
                run_nonlinear(&nl)?.losses
            }
        };
        Ok(slice_mean(&losses, cfg.slice_frac))
    })();
    let (mean, error) = match result {
        Ok(v) => (v, None),
        Err(e) => (f64::NAN, Some(e.to_string())),
    };
    SweepRow {
        depth: cell.depth,
        lr: cell.lr,
        a: cell.a,
        seed_index: cell.seed_index,
        cell_seed: cell.seed,
        mean_slice_loss: mean,
        error,
    }
}

/// Runs every cell of the grid on a bounded worker pool and returns the rows
/// in sorted order plus the manifest. The per-cell seeds depend only on the
/// master seed and the cell's grid coordinates, never on scheduling.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    let started = unix_ms();
    let mut dataset = load_dataset(&cfg.dataset)?;
    if cfg.kind != ExperimentKind::Train && dataset.d_in() != 1 {
        match &cfg.dataset {
            DatasetSpec::Idx { projection_seed, .. } => {
                dataset = dataset.project_to_scalar(*projection_seed);
            }
            DatasetSpec::Synthetic { .. } => {
                return Err(HarnessError::Config(
                    "limit engines need a synthetic dataset with d_in = 1".into(),
                ));
            }
        }
    }

    let mut cells = Vec::new();
    for &depth in &cfg.depths {
        for (li, &lr) in cfg.lrs.iter().enumerate() {
            for (ai, &a) in cfg.a_grid.iter().enumerate() {
                for s in 0..cfg.seeds {
                    cells.push(Cell {
                        depth,
                        lr,
                        a,
                        seed_index: s,
                        seed: cell_seed(
                            cfg.master_seed,
                            depth as u64,
                            li as u64,
                            ai as u64,
                            s as u64,
                        ),
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> =
        pool.install(|| cells.par_iter().map(|c| run_cell(cfg, &dataset, c)).collect());

    // Enumeration order is already sorted; make the contract explicit.
    rows.sort_by(|x, y| {
        x.depth
            .cmp(&y.depth)
            .then(x.lr.total_cmp(&y.lr))
            .then(x.a.total_cmp(&y.a))
            .then(x.seed_index.cmp(&y.seed_index))
    });

    let manifest = RunManifest {
        schema: SWEEP_SCHEMA_VERSION.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        master_seed: cfg.master_seed,
        cell_seeds: rows.iter().map(|r| r.cell_seed).collect(),
        threads: cfg.threads,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        fp_note: format!(
            "IEEE-754 binary64, round-to-nearest-even; {}-{}",
            std::env::consts::ARCH,
            std::env::consts::OS
        ),
    };
    Ok(SweepOutcome { rows, manifest })
}

/// Writes rows under [`SWEEP_CSV_HEADER`]. Floats use 17-significant-digit
/// scientific notation with `.` decimal points; the error column is empty on
/// success, with any commas or newlines in error text flattened to `;`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let err = r
            .error
            .as_deref()
            .unwrap_or("")
            .replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.depth,
            fmt_f64(r.lr),
            fmt_f64(r.a),
            r.seed_index,
            r.cell_seed,
            fmt_f64(r.mean_slice_loss),
            err
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
