//! `depthlab`: one command-line front end over the finite-width simulator,
//! the infinite-width limit engines, and the diagnostics.
//!
//! Every subcommand reads the same TOML config (`--config`), applies its
//! flags on top (flags win), and writes CSV/JSON artifacts under `--out`.
//! An `--out` path ending in `.csv` or `.json` names a single file; anything
//! else is treated as a directory. Single runs derive their seed from the
//! master seed as the `(depth, 0, 0, 0)` sweep cell would.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diagnostics::grids::{sublevel_fit, SUBLEVEL_QUANTILE};
use diagnostics::{
    feature_diversity_exponent, fit_power_law, pow2_eps_grid, warmup_al_curve,
    write_sublevel_csv, WarmupRule,
};
use harness::seeds::cell_seed;
use harness::{
    load_dataset, run_sweep, synth_dataset, write_sweep_csv, DatasetSpec, HarnessError,
    Overrides, SweepConfig, Task, SWEEP_CSV_HEADER,
};
use parametrization::classify_region;
use resnet_sim::steplog::{fmt_f64, write_step_log};
use resnet_sim::{forward, init, train_step, Phi};
use tp_linear_limit::{run_generalized, LimitConfig};
use tp_nonlinear_limit::{run_nonlinear, Activation, NonlinearConfig};

/// Relative anchor layer of the diversity probe.
const ANCHOR_LAMBDA: f64 = 0.25;

#[derive(Parser)]
#[command(
    name = "depthlab",
    version,
    about = "Depth-scaling experiments: simulators, limit engines, diagnostics",
    arg_required_else_help = true
)]
struct Cli {
    /// TOML config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (.csv/.json) or directory (default `depthlab-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; all run seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct RunFlags {
    /// Depth (number of residual blocks).
    #[arg(long)]
    depth: Option<usize>,
    /// Branch exponent alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Learning-rate exponent gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Raw learning rate of this run.
    #[arg(long)]
    lr: Option<f64>,
    /// Activation: identity, relu or abs.
    #[arg(long)]
    phi: Option<String>,
    /// Layers per residual block.
    #[arg(long)]
    block_depth: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the deterministic linear infinite-width program.
    LimitLinear {
        #[command(flatten)]
        flags: RunFlags,
        /// Step count, or explicit `input:target` pairs separated by commas.
        /// Omitted: the config dataset supplies `steps` scalar pairs.
        #[arg(long)]
        steps: Option<String>,
    },
    /// Run the nonlinear infinite-width program at alpha = gamma = 1/2.
    LimitNonlinear {
        #[command(flatten)]
        flags: RunFlags,
        /// Step count, or explicit `input:target` pairs separated by commas.
        #[arg(long)]
        steps: Option<String>,
    },
    /// Train one finite-width network and write its step log.
    Train {
        #[command(flatten)]
        flags: RunFlags,
        /// Number of optimization steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run every (depth, lr, a, seed) grid cell and write the result table
    /// plus the manifest.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        /// Number of optimization steps per cell.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train one network, then fit the layer-distance growth exponent of its
    /// feature stream.
    Diversity {
        #[command(flatten)]
        flags: RunFlags,
        /// Number of optimization steps before the probe.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Monte-Carlo single-neuron warm-up game: mean squared first update vs
    /// depth, for SGD and SignSGD.
    Warmup {
        /// Monte-Carlo trials per depth (default 10000).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Name the (alpha, gamma) stability region.
    Classify {
        /// Branch exponent alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Learning-rate exponent gamma.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Tabulate the Gaussian activation kernels over a covariance grid.
    Vkernels {
        /// Activation: identity, relu or abs.
        #[arg(long)]
        phi: Option<String>,
    },
    /// Fit the optimal-(lr, a) ridge slope of a sweep result table.
    Slope {
        /// Sweep CSV produced by `depthlab sweep`.
        input: PathBuf,
        /// Depth to select when the table holds several.
        #[arg(long)]
        depth: Option<usize>,
    },
}

enum OutTarget {
    File(PathBuf),
    Dir(PathBuf),
}

impl OutTarget {
    /// Single-file target if `--out` names a `.csv`/`.json` path, otherwise
    /// a directory (created on demand).
    fn resolve(out: &Option<PathBuf>) -> Result<Self, HarnessError> {
        match out {
            Some(p)
                if p.extension().is_some_and(|e| e == "csv" || e == "json") =>
            {
                if let Some(parent) = p.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent)?;
                    }
                }
                Ok(OutTarget::File(p.clone()))
            }
            Some(p) => {
                std::fs::create_dir_all(p)?;
                Ok(OutTarget::Dir(p.clone()))
            }
            None => {
                let dir = PathBuf::from("depthlab-out");
                std::fs::create_dir_all(&dir)?;
                Ok(OutTarget::Dir(dir))
            }
        }
    }
}

type CliError = Box<dyn std::error::Error>;

fn parse_phi(text: &str) -> Result<Phi, HarnessError> {
    match text.to_ascii_lowercase().as_str() {
        "identity" => Ok(Phi::Identity),
        "relu" => Ok(Phi::Relu),
        "abs" => Ok(Phi::Abs),
        other => Err(HarnessError::Config(format!(
            "unknown activation '{other}'; expected identity, relu or abs"
        ))),
    }
}

fn activation_of(phi: Phi) -> Activation {
    match phi {
        Phi::Identity => Activation::Identity,
        Phi::Relu => Activation::Relu,
        Phi::Abs => Activation::Abs,
    }
}

/// `--steps` of the limit subcommands: a bare count, or explicit
/// `input:target` pairs.
enum StepsSpec {
    Count(usize),
    Pairs(Vec<(f64, f64)>),
}

fn parse_steps_spec(text: &str) -> Result<StepsSpec, HarnessError> {
    if let Ok(count) = text.parse::<usize>() {
        return Ok(StepsSpec::Count(count));
    }
    let mut pairs = Vec::new();
    for part in text.split(',') {
        let (x, y) = part.trim().split_once(':').ok_or_else(|| {
            HarnessError::Config(format!(
                "--steps expects a count or comma-separated input:target pairs, got '{part}'"
            ))
        })?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                HarnessError::Config(format!("'{s}' is not a number in --steps pair '{part}'"))
            })
        };
        pairs.push((parse(x)?, parse(y)?));
    }
    if pairs.is_empty() {
        return Err(HarnessError::Config("--steps pair list is empty".into()));
    }
    Ok(StepsSpec::Pairs(pairs))
}

/// Scalar `(input, target)` stream for a limit run: explicit pairs when
/// given, otherwise drawn from the config dataset (idx inputs are projected;
/// a non-scalar synthetic spec falls back to a fresh seeded scalar stream).
fn limit_stream(
    cfg: &SweepConfig,
    spec: &Option<String>,
) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let count = match spec.as_deref().map(parse_steps_spec).transpose()? {
        Some(StepsSpec::Pairs(pairs)) => {
            return Ok(pairs.into_iter().unzip());
        }
        Some(StepsSpec::Count(count)) => count,
        None => cfg.steps,
    };
    let dataset = match &cfg.dataset {
        DatasetSpec::Idx { projection_seed, .. } => {
            let ds = load_dataset(&cfg.dataset)?;
            if ds.d_in() == 1 {
                ds
            } else {
                ds.project_to_scalar(*projection_seed)
            }
        }
        DatasetSpec::Synthetic { d_in: 1, task: Task::Regression, .. } => {
            load_dataset(&cfg.dataset)?
        }
        DatasetSpec::Synthetic { .. } => {
            synth_dataset(1, Task::Regression, count.max(1), cfg.master_seed)
        }
    };
    dataset.scalar_stream(count)
}

/// Describes one single-run invocation next to its artifacts so the numbers
/// can be reproduced without the shell history.
fn write_run_json(
    dir: &Path,
    subcommand: &str,
    cfg: &SweepConfig,
    extra: serde_json::Value,
) -> Result<(), CliError> {
    let record = serde_json::json!({
        "schema": "depthlab.run.v1",
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "config": cfg,
        "extra": extra,
    });
    std::fs::write(dir.join("run.json"), format!("{:#}\n", record))?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<SweepConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::from_path(path)?,
        None => SweepConfig::default(),
    };
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        threads: cli.threads,
        ..Overrides::default()
    });
    Ok(cfg)
}

fn apply_run_flags(cfg: &mut SweepConfig, flags: &RunFlags) -> Result<(), HarnessError> {
    let phi = flags.phi.as_deref().map(parse_phi).transpose()?;
    cfg.apply_overrides(&Overrides {
        depth: flags.depth,
        alpha: flags.alpha,
        gamma: flags.gamma,
        lr: flags.lr,
        phi,
        block_depth: flags.block_depth,
        ..Overrides::default()
    });
    Ok(())
}

/// Single runs read their learning rate from `--lr`, falling back to the
/// parametrization's `eta`, not to the sweep grid.
fn single_eta(cfg: &SweepConfig, flags: &RunFlags) -> f64 {
    flags.lr.unwrap_or(cfg.parametrization.eta)
}

fn single_depth(cfg: &SweepConfig, flags: &RunFlags) -> usize {
    flags.depth.unwrap_or(cfg.depths[0])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("depthlab: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::LimitLinear { flags, steps } => {
            apply_run_flags(&mut cfg, flags)?;
            let (inputs, targets) = limit_stream(&cfg, steps)?;
            let depth = single_depth(&cfg, flags);
            let trace = run_generalized(&LimitConfig {
                depth,
                alpha: cfg.parametrization.alpha,
                gamma: cfg.parametrization.gamma,
                eta: single_eta(&cfg, flags),
                inputs,
                targets,
            })?;
            let final_loss = *trace.losses.last().expect("at least one step");
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    trace.write_step_csv(&path)?;
                    println!(
                        "limit-linear depth={depth} steps={} final_loss={final_loss:.6e} -> {}",
                        trace.steps(),
                        path.display()
                    );
                }
                OutTarget::Dir(dir) => {
                    trace.write_step_csv(dir.join("steps.csv"))?;
                    trace.write_profile_csv(dir.join("profile.csv"))?;
                    trace.write_kernel_csv(dir.join("kernel.csv"))?;
                    write_run_json(
                        &dir,
                        "limit-linear",
                        &cfg,
                        serde_json::json!({
                            "depth": depth,
                            "eta": single_eta(&cfg, flags),
                            "inputs": trace.config.inputs,
                            "targets": trace.config.targets,
                        }),
                    )?;
                    println!(
                        "limit-linear depth={depth} steps={} final_loss={final_loss:.6e} -> {}",
                        trace.steps(),
                        dir.display()
                    );
                }
            }
        }
        Cmd::LimitNonlinear { flags, steps } => {
            apply_run_flags(&mut cfg, flags)?;
            let (inputs, targets) = limit_stream(&cfg, steps)?;
            let depth = single_depth(&cfg, flags);
            let nl = NonlinearConfig::new(
                depth,
                activation_of(cfg.net.phi),
                single_eta(&cfg, flags),
                &inputs,
                &targets,
            );
            let trace = run_nonlinear(&nl)?;
            let final_loss = *trace.losses.last().expect("at least one step");
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    trace.write_step_csv(&path)?;
                    println!(
                        "limit-nonlinear depth={depth} phi={:?} final_loss={final_loss:.6e} -> {}",
                        cfg.net.phi,
                        path.display()
                    );
                }
                OutTarget::Dir(dir) => {
                    trace.write_step_csv(dir.join("steps.csv"))?;
                    trace.write_profile_csv(dir.join("profile.csv"))?;
                    trace.write_kernel_csv(dir.join("kernel.csv"))?;
                    write_run_json(
                        &dir,
                        "limit-nonlinear",
                        &cfg,
                        serde_json::json!({
                            "depth": depth,
                            "eta": single_eta(&cfg, flags),
                            "inputs": nl.inputs,
                            "targets": nl.targets,
                        }),
                    )?;
                    println!(
                        "limit-nonlinear depth={depth} phi={:?} final_loss={final_loss:.6e} -> {}",
                        cfg.net.phi,
                        dir.display()
                    );
                }
            }
        }
        Cmd::Train { flags, steps } => {
            apply_run_flags(&mut cfg, flags)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let dataset = load_dataset(&cfg.dataset)?;
            let depth = single_depth(&cfg, flags);
            let net = cfg.net.to_net_config(depth, dataset.d_in(), dataset.d_out());
            let mut p = cfg.parametrization;
            p.eta = single_eta(&cfg, flags);
            let rule = cfg.optimizer.rule();
            let seed = cell_seed(cfg.master_seed, depth as u64, 0, 0, 0);
            let mut state = init(&net, &rule, seed)?;
            let mut records = Vec::with_capacity(cfg.steps);
            for t in 0..cfg.steps {
                let batch = dataset.batch_for_step(t, cfg.batch_size);
                records.push(train_step(&mut state, &p, &rule, &batch)?);
            }
            let final_loss = records.last().map_or(f64::NAN, |r| r.loss);
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    write_step_log(&path, &records)?;
                    println!(
                        "train depth={depth} n={} steps={} final_loss={final_loss:.6e} -> {}",
                        net.n,
                        cfg.steps,
                        path.display()
                    );
                }
                OutTarget::Dir(dir) => {
                    let path = dir.join("steps.csv");
                    write_step_log(&path, &records)?;
                    write_run_json(
                        &dir,
                        "train",
                        &cfg,
                        serde_json::json!({ "depth": depth, "seed": seed, "eta": p.eta }),
                    )?;
                    println!(
                        "train depth={depth} n={} steps={} final_loss={final_loss:.6e} -> {}",
                        net.n,
                        cfg.steps,
                        path.display()
                    );
                }
            }
        }
        Cmd::Sweep { flags, steps } => {
            apply_run_flags(&mut cfg, flags)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let outcome = run_sweep(&cfg)?;
            let (csv_path, manifest_path) = match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    let manifest = path.with_extension("manifest.json");
                    (path, manifest)
                }
                OutTarget::Dir(dir) => (dir.join("sweep.csv"), dir.join("manifest.json")),
            };
            write_sweep_csv(&csv_path, &outcome.rows)?;
            outcome.manifest.write_json(&manifest_path)?;
            let failed = outcome.rows.iter().filter(|r| r.error.is_some()).count();
            println!(
                "sweep {} rows ({failed} failed) -> {} + {}",
                outcome.rows.len(),
                csv_path.display(),
                manifest_path.display()
            );
        }
        Cmd::Diversity { flags, steps } => {
            apply_run_flags(&mut cfg, flags)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let dataset = load_dataset(&cfg.dataset)?;
            let depth = single_depth(&cfg, flags);
            let net = cfg.net.to_net_config(depth, dataset.d_in(), dataset.d_out());
            let mut p = cfg.parametrization;
            p.eta = single_eta(&cfg, flags);
            let rule = cfg.optimizer.rule();
            let seed = cell_seed(cfg.master_seed, depth as u64, 0, 0, 0);
            let mut state = init(&net, &rule, seed)?;
            for t in 0..cfg.steps {
                let batch = dataset.batch_for_step(t, cfg.batch_size);
                train_step(&mut state, &p, &rule, &batch)?;
            }
            let probe = dataset.batch_for_step(0, cfg.batch_size);
            let cache = forward(&state, &p, &probe.inputs)?;
            // Largest dyadic grid that keeps lambda + eps inside the stream.
            let count = ((1.0 - ANCHOR_LAMBDA) * depth as f64).log2().floor() as usize;
            let grid = pow2_eps_grid(depth, count.max(2));
            let report = feature_diversity_exponent(&cache.xs, ANCHOR_LAMBDA, &grid)?;
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    if path.extension().is_some_and(|e| e == "json") {
                        report.write_summary_json(&path, None)?;
                    } else {
                        report.write_csv(&path)?;
                    }
                    println!(
                        "diversity depth={depth} exponent={:.4} -> {}",
                        report.fitted_exponent,
                        path.display()
                    );
                }
                OutTarget::Dir(dir) => {
                    report.write_csv(&dir.join("diversity.csv"))?;
                    report.write_summary_json(&dir.join("diversity_summary.json"), None)?;
                    write_run_json(
                        &dir,
                        "diversity",
                        &cfg,
                        serde_json::json!({ "depth": depth, "seed": seed, "lambda": ANCHOR_LAMBDA }),
                    )?;
                    println!(
                        "diversity depth={depth} exponent={:.4} -> {}",
                        report.fitted_exponent,
                        dir.display()
                    );
                }
            }
        }
        Cmd::Warmup { steps } => {
            let trials = steps.unwrap_or(10_000);
            let rules = [WarmupRule::Sgd, WarmupRule::SignSgd];
            let mut curves = Vec::new();
            for rule in rules {
                let curve = warmup_al_curve(rule, &cfg.depths, trials, cfg.master_seed)?;
                let fit = fit_power_law(&curve)?;
                println!(
                    "warmup {} exponent={:.4} (depths {}..{}, {trials} trials)",
                    rule.label(),
                    fit.exponent,
                    cfg.depths[0],
                    cfg.depths[cfg.depths.len() - 1]
                );
                curves.push((rule, curve, fit));
            }
            let mut csv = String::from("rule,depth,mean_sq_update\n");
            for (rule, curve, _) in &curves {
                for (depth, value) in curve {
                    csv.push_str(&format!("{},{},{}\n", rule.label(), depth, fmt_f64(*value)));
                }
            }
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    if path.extension().is_some_and(|e| e == "json") {
                        write_warmup_summary(&path, &curves, trials)?;
                    } else {
                        std::fs::write(&path, csv)?;
                    }
                    println!("warmup -> {}", path.display());
                }
                OutTarget::Dir(dir) => {
                    std::fs::write(dir.join("warmup.csv"), csv)?;
                    write_warmup_summary(&dir.join("warmup_summary.json"), &curves, trials)?;
                    println!("warmup -> {}", dir.display());
                }
            }
        }
        Cmd::Classify { alpha, gamma } => {
            let a = alpha.unwrap_or(cfg.parametrization.alpha);
            let g = gamma.unwrap_or(cfg.parametrization.gamma);
            println!("{}", classify_region(a, g)?);
        }
        Cmd::Vkernels { phi } => {
            let phi = phi.as_deref().map(parse_phi).transpose()?.unwrap_or(cfg.net.phi);
            let set = tp_nonlinear_limit::VKernelSet::new(activation_of(phi));
            let scales = [0.5f64, 1.0, 2.0];
            let rhos = [-0.9f64, -0.5, 0.0, 0.5, 0.9];
            let mut pairs = Vec::new();
            for &c11 in &scales {
                for &c22 in &scales {
                    for &rho in &rhos {
                        let c12 = rho * (c11 * c22).sqrt();
                        pairs.push(tp_nonlinear_limit::GaussPair::new(c11, c12, c22)?);
                    }
                }
            }
            let path = match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => path,
                OutTarget::Dir(dir) => dir.join("vkernels.csv"),
            };
            set.write_table_csv(&path, &pairs)?;
            println!("vkernels phi={phi:?} rows={} -> {}", pairs.len(), path.display());
        }
        Cmd::Slope { input, depth } => {
            let (lr_log2, a_log2, losses, used_depth) = sublevel_grid_from_csv(input, *depth)?;
            let fit = sublevel_fit(&losses, &lr_log2, &a_log2, SUBLEVEL_QUANTILE)?;
            println!(
                "slope depth={used_depth} slope={:.4} selected={} cells",
                fit.slope,
                fit.selected.len()
            );
            match OutTarget::resolve(&cli.out)? {
                OutTarget::File(path) => {
                    if path.extension().is_some_and(|e| e == "json") {
                        fit.write_summary_json(&path, None)?;
                    } else {
                        write_sublevel_csv(&path, &lr_log2, &a_log2, &losses, &fit)?;
                    }
                }
                OutTarget::Dir(dir) => {
                    write_sublevel_csv(&dir.join("sublevel.csv"), &lr_log2, &a_log2, &losses, &fit)?;
                    fit.write_summary_json(&dir.join("slope_summary.json"), None)?;
                }
            }
        }
    }
    Ok(())
}

fn write_warmup_summary(
    path: &Path,
    curves: &[(WarmupRule, Vec<(f64, f64)>, diagnostics::PowerLawFit)],
    trials: usize,
) -> Result<(), CliError> {
    let mut entries = serde_json::Map::new();
    for (rule, _, fit) in curves {
        entries.insert(
            rule.label().to_string(),
            serde_json::json!({ "exponent": fit.exponent, "r2": fit.r2 }),
        );
    }
    let record = serde_json::json!({
        "schema": "depthlab.warmup.v1",
        "trials": trials,
        "fits": entries,
    });
    std::fs::write(path, format!("{:#}\n", record))?;
    Ok(())
}

/// Reads a sweep result table back into the (log2 lr, log2 a) loss grid of
/// one depth, averaging over seeds and skipping failed cells.
fn sublevel_grid_from_csv(
    path: &Path,
    depth: Option<usize>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>, usize), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != SWEEP_CSV_HEADER {
        return Err(Box::new(HarnessError::Config(format!(
            "unrecognized sweep header '{header}'"
        ))));
    }
    struct Row {
        depth: usize,
        lr: f64,
        a: f64,
        loss: f64,
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Box::new(HarnessError::Config(format!(
                "sweep row {} has {} fields, expected 7",
                i + 2,
                fields.len()
            ))));
        }
        rows.push(Row {
            depth: fields[0].parse()?,
            lr: fields[1].parse()?,
            a: fields[2].parse()?,
            loss: fields[5].parse()?,
        });
    }
    let mut depths: Vec<usize> = rows.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    let used_depth = match depth {
        Some(d) if depths.contains(&d) => d,
        Some(d) => {
            return Err(Box::new(HarnessError::Config(format!(
                "depth {d} not present; table holds {depths:?}"
            ))))
        }
        None if depths.len() == 1 => depths[0],
        None => {
            return Err(Box::new(HarnessError::Config(format!(
                "table holds several depths {depths:?}; pick one with --depth"
            ))))
        }
    };
    let mut lrs: Vec<f64> = rows.iter().filter(|r| r.depth == used_depth).map(|r| r.lr).collect();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut a_grid: Vec<f64> =
        rows.iter().filter(|r| r.depth == used_depth).map(|r| r.a).collect();
    a_grid.sort_by(f64::total_cmp);
    a_grid.dedup();
    let mut sums = vec![vec![0.0f64; a_grid.len()]; lrs.len()];
    let mut counts = vec![vec![0usize; a_grid.len()]; lrs.len()];
    for r in rows.iter().filter(|r| r.depth == used_depth && r.loss.is_finite()) {
        let i = lrs.iter().position(|&v| v == r.lr).expect("lr from the same rows");
        let j = a_grid.iter().position(|&v| v == r.a).expect("a from the same rows");
        sums[i][j] += r.loss;
        counts[i][j] += 1;
    }
    let losses: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(srow, crow)| {
            srow.iter()
                .zip(crow)
                .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect()
        })
        .collect();
    let lr_log2: Vec<f64> = lrs.iter().map(|v| v.log2()).collect();
    let a_log2: Vec<f64> = a_grid.iter().map(|v| v.log2()).collect();
    Ok((lr_log2, a_log2, losses, used_depth))
}
