//! Deterministic infinite-width training dynamics of the nonlinear residual
//! stream at the depthwise feature-learning point.
//!
//! The block applies a frozen Gaussian matrix to the stream, the activation,
//! a mean subtraction, and adds the result back with coefficient
//! `1/sqrt(depth)`. At infinite width every stream again lives in the span of
//! a fixed dictionary: the embedded input, the readout, one centered
//! activation image per layer of each step's forward preactivation, and one
//! transposed image per layer of each step's derivative-weighted backward
//! stream. What changes against the linear dynamics is purely Gaussian
//! bookkeeping: dictionary members pair through the activation kernels of
//! [`crate::kernels`] instead of raw stream covariances, and every
//! interaction correction is weighted by the derivative pairing of the two
//! streams involved.
//!
//! [`run_nonlinear`] evolves the coefficient grids and covariance tables layer
//! by layer and step by step, exactly as the linear engine does, and reduces
//! to it when the activation is the identity.

use crate::kernels::{v_c_prime, v_phi_c, v_phi_prime, Activation, GaussPair, KernelError, VcPrimeVariant};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use thiserror::Error;

/// Upper bound on the memory the coefficient and covariance tables may take.
pub const TABLE_BYTE_BUDGET: u128 = 2_600_000_000;

#[derive(Debug, Error)]
pub enum NonlinearError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("tables for depth {depth}, {steps} steps need about {need} bytes, over the {TABLE_BYTE_BUDGET} byte budget")]
    Capacity { depth: usize, steps: usize, need: u128 },
    #[error("activation kernel evaluation failed at step {step}, layer {layer}: {source}")]
    Kernel { step: usize, layer: usize, source: KernelError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One infinite-width run: depth, activation, learning rate, the scalar data
/// stream (one pair per optimization step), and the backward passthrough
/// pairing variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConfig {
    pub depth: usize,
    pub phi: Activation,
    pub eta: f64,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    #[serde(default)]
    pub variant: VcPrimeVariant,
}

impl NonlinearConfig {
    pub fn new(depth: usize, phi: Activation, eta: f64, inputs: &[f64], targets: &[f64]) -> Self {
        NonlinearConfig {
            depth,
            phi,
            eta,
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            variant: VcPrimeVariant::default(),
        }
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    fn validate(&self) -> Result<(), NonlinearError> {
        if self.depth == 0 {
            return Err(NonlinearError::InvalidConfig("depth must be at least 1"));
        }
        if self.depth > 4096 {
            return Err(NonlinearError::InvalidConfig("depth above 4096 is not supported"));
        }
        if self.inputs.is_empty() {
            return Err(NonlinearError::InvalidConfig("at least one training step is required"));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(NonlinearError::InvalidConfig("inputs and targets must have equal length"));
        }
        if self.inputs.len() > 64 {
            return Err(NonlinearError::InvalidConfig("more than 64 steps is not supported"));
        }
        let finite = self.eta.is_finite()
            && self.inputs.iter().all(|x| x.is_finite())
            && self.targets.iter().all(|y| y.is_finite());
        if !finite {
            return Err(NonlinearError::InvalidConfig("all parameters and data must be finite"));
        }
        let need = estimate_table_bytes(self.depth, self.steps());
        if need > TABLE_BYTE_BUDGET {
            return Err(NonlinearError::Capacity { depth: self.depth, steps: self.steps(), need });
        }
        Ok(())
    }
}

/// Approximate heap footprint of the tables for a run of this size. The
/// nonlinear tables double the covariance storage of the linear ones because
/// stream covariances and dictionary-member pairings no longer coincide.
pub fn estimate_table_bytes(depth: usize, steps: usize) -> u128 {
    let d = depth as u128;
    let t = steps as u128;
    let pairs = t * (t + 1) / 2;
    let grids = pairs * 4 * (d + 1) * d * 8;
    let seeds = t * 4 * (d + 1) * 8;
    let covs = 4 * pairs * d * 8;
    grids + seeds + covs
}

/// Coefficients of every stream over the Gaussian dictionary; indexing is
/// identical to the linear engine's table. `t` is the step that produced the
/// stream, `r` the step whose streams seeded the members, `a` forward (`0`)
/// or backward (`1`), `b` the member family: centered activation images
/// (`0`) or transposed derivative-weighted images (`1`). Rows are layer
/// positions `p = 0..=depth`, columns dictionary layers `m = 1..=depth`.
#[derive(Debug, Clone)]
pub struct GammaTable {
    depth: usize,
    grids: Vec<Vec<[[Vec<f64>; 2]; 2]>>,
    seeds: Vec<[[Vec<f64>; 2]; 2]>,
}

impl GammaTable {
    fn new(depth: usize) -> Self {
        GammaTable { depth, grids: Vec::new(), seeds: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn steps(&self) -> usize {
        self.grids.len()
    }

    /// Grid coefficient at row `p` and column `m` (1-based). Streams never
    /// load on members seeded by later steps, so `r > t` reads as zero.
    pub fn coefficient(&self, t: usize, r: usize, a: usize, b: usize, p: usize, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.depth, "column m is 1-based");
        if r > t {
            return 0.0;
        }
        self.grids[t][r][a][b][p * self.depth + (m - 1)]
    }

    /// Coefficient over a global direction: the embedded input for `b = 0`,
    /// the readout direction for `b = 1`.
    pub fn direction_coefficient(&self, t: usize, a: usize, b: usize, p: usize) -> f64 {
        self.seeds[t][a][b][p]
    }

    fn row(&self, t: usize, r: usize, a: usize, b: usize, p: usize) -> &[f64] {
        let d = self.depth;
        &self.grids[t][r][a][b][p * d..(p + 1) * d]
    }
}

/// Covariance tables: raw stream covariances and the activation-kernel
/// pairings of the dictionary members built from those streams.
///
/// `value(0, t, s, m)` is the inner product of the step-`t` and step-`s`
/// forward streams entering layer `m`; `value(1, t, s, m)` of the backward
/// streams leaving layer `m`. `basis_value(b, t, s, m)` is the pairing of the
/// family-`b` dictionary members seeded at layer `m`: the centered activation
/// covariance for `b = 0`, the derivative pairing times the backward stream
/// covariance for `b = 1`. All are symmetric in `(t, s)`.
#[derive(Debug, Clone)]
pub struct CTable {
    depth: usize,
    stream: [Vec<Vec<Vec<f64>>>; 2],
    basis: [Vec<Vec<Vec<f64>>>; 2],
}

impl CTable {
    fn new(depth: usize) -> Self {
        CTable { depth, stream: [Vec::new(), Vec::new()], basis: [Vec::new(), Vec::new()] }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn steps(&self) -> usize {
        self.stream[0].len()
    }

    /// Stream covariance at dictionary layer `m` (1-based).
    pub fn value(&self, a: usize, t: usize, s: usize, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.depth, "layer m is 1-based");
        self.slice(&self.stream[a], t, s)[m - 1]
    }

    /// Dictionary-member pairing at layer `m` (1-based).
    pub fn basis_value(&self, b: usize, t: usize, s: usize, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.depth, "layer m is 1-based");
        self.slice(&self.basis[b], t, s)[m - 1]
    }

    fn slice<'a>(&self, table: &'a [Vec<Vec<f64>>], t: usize, s: usize) -> &'a [f64] {
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        &table[hi][lo]
    }
}

/// Everything a run produces: per-step outputs, errors, losses, layer
/// covariance profiles, the output kernel, and the raw tables.
#[derive(Debug, Clone)]
pub struct NonlinearTrace {
    pub config: NonlinearConfig,
    /// Network output at each step, before that step's update.
    pub f: Vec<f64>,
    /// Loss derivative at each step (`f - y` for squared loss).
    pub chi: Vec<f64>,
    /// Squared loss `(f - y)^2 / 2` at each step.
    pub losses: Vec<f64>,
    /// `layer_cov[t][l]` is the squared feature scale of the step-`t` forward
    /// stream at layer `l = 0..=depth`.
    pub layer_cov: Vec<Vec<f64>>,
    /// Symmetric Gram matrix of the final-layer streams across steps.
    pub kernel: Vec<Vec<f64>>,
    pub gamma: GammaTable,
    pub c: CTable,
}

impl NonlinearTrace {
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn steps(&self) -> usize {
        self.f.len()
    }

    /// Root-mean-square feature scale of the step-`t` stream at layer `l`.
    pub fn layer_rms_limit(&self, t: usize, l: usize) -> f64 {
        self.layer_cov[t][l].max(0.0).sqrt()
    }

    /// Inner product of the final-layer features of steps `s` and `t`.
    pub fn output_kernel(&self, s: usize, t: usize) -> f64 {
        self.kernel[s][t]
    }

    /// Inner product of the top backward sensitivities of steps `s` and `t`.
    pub fn backward_boundary(&self, s: usize, t: usize) -> f64 {
        self.chi[s] * self.chi[t]
    }

    /// Recompute a forward stream covariance at layer position `l` straight
    /// from the tables. Agrees with `layer_cov` and `kernel` where defined.
    pub fn stream_cov(&self, t: usize, s: usize, l: usize) -> f64 {
        dictionary_cov(&self.gamma, &self.c, 0, l, t, s)
    }

    /// Recompute a backward stream covariance at layer `l = 1..=depth`.
    pub fn backward_cov(&self, t: usize, s: usize, l: usize) -> f64 {
        dictionary_cov(&self.gamma, &self.c, 1, l, t, s)
    }

    /// Per-step scalars as CSV: `step,f,chi,loss`.
    pub fn write_step_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), NonlinearError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,f,chi,loss")?;
        for t in 0..self.steps() {
            writeln!(w, "{t},{},{},{}", fmt(self.f[t]), fmt(self.chi[t]), fmt(self.losses[t]))?;
        }
        Ok(w.flush()?)
    }

    /// Layer profiles as CSV: `step,layer,cov,rms`.
    pub fn write_profile_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), NonlinearError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,layer,cov,rms")?;
        for t in 0..self.steps() {
            for (l, cov) in self.layer_cov[t].iter().enumerate() {
                writeln!(w, "{t},{l},{},{}", fmt(*cov), fmt(self.layer_rms_limit(t, l)))?;
            }
        }
        Ok(w.flush()?)
    }

    /// Output kernel as CSV: `s,t,value` over all step pairs.
    pub fn write_kernel_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), NonlinearError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "s,t,value")?;
        for s in 0..self.steps() {
            for t in 0..self.steps() {
                writeln!(w, "{s},{t},{}", fmt(self.kernel[s][t]))?;
            }
        }
        Ok(w.flush()?)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Run the nonlinear limit. The branch coefficient `1/sqrt(depth)` and
/// update prefactor `1/depth` of the depthwise feature-learning point are
/// built in; only the activation, learning rate, and data vary.
pub fn run_nonlinear(cfg: &NonlinearConfig) -> Result<NonlinearTrace, NonlinearError> {
    cfg.validate()?;
    Engine::run(cfg.clone())
}

/// Covariance of two streams from their dictionary decompositions: global
/// direction products plus, for every dictionary member both sides can load
/// on, coefficient x member-pairing x coefficient, averaged over layers.
fn dictionary_cov(g: &GammaTable, c: &CTable, a: usize, p: usize, t: usize, s: usize) -> f64 {
    let d = g.depth;
    let mut acc = 0.0;
    for b in 0..2 {
        acc += g.seeds[t][a][b][p] * g.seeds[s][a][b][p];
    }
    let mut grid_acc = 0.0;
    for tp in 0..=t {
        for sp in 0..=s {
            for b in 0..2 {
                let mid = c.slice(&c.basis[b], tp, sp);
                let rt = g.row(t, tp, a, b, p);
                let rs = g.row(s, sp, a, b, p);
                let mut inner = 0.0;
                for m in 0..d {
                    inner += rt[m] * mid[m] * rs[m];
                }
                grid_acc += inner;
            }
        }
    }
    acc + grid_acc / d as f64
}

struct Engine {
    cfg: NonlinearConfig,
    g: GammaTable,
    c: CTable,
}

impl Engine {
    fn run(cfg: NonlinearConfig) -> Result<NonlinearTrace, NonlinearError> {
        let depth = cfg.depth;
        let steps = cfg.steps();
        let mut e = Engine { cfg, g: GammaTable::new(depth), c: CTable::new(depth) };
        let mut f = Vec::with_capacity(steps);
        let mut chi = Vec::with_capacity(steps);
        let mut losses = Vec::with_capacity(steps);
        let mut layer_cov = Vec::with_capacity(steps);
        let mut kernel = vec![vec![0.0; steps]; steps];

        for t in 0..steps {
            e.push_step(t);
            e.forward_sweep(t)?;
            let ft = e.g.seeds[t][0][1][depth];
            let ct = ft - e.cfg.targets[t];
            f.push(ft);
            chi.push(ct);
            losses.push(0.5 * ct * ct);

            let mut profile = Vec::with_capacity(depth + 1);
            for l in 0..depth {
                profile.push(e.c.stream[0][t][t][l]);
            }
            profile.push(dictionary_cov(&e.g, &e.c, 0, depth, t, t));
            for s in 0..t {
                let v = dictionary_cov(&e.g, &e.c, 0, depth, t, s);
                kernel[t][s] = v;
                kernel[s][t] = v;
            }
            kernel[t][t] = profile[depth];
            layer_cov.push(profile);

            e.backward_sweep(t, ct)?;
        }

        Ok(NonlinearTrace { config: e.cfg, f, chi, losses, layer_cov, kernel, gamma: e.g, c: e.c })
    }

    fn push_step(&mut self, t: usize) {
        let d = self.cfg.depth;
        let cell = || {
            [[vec![0.0; (d + 1) * d], vec![0.0; (d + 1) * d]], [vec![0.0; (d + 1) * d], vec![0.0; (d + 1) * d]]]
        };
        self.g.grids.push((0..=t).map(|_| cell()).collect());
        self.g.seeds.push([[vec![0.0; d + 1], vec![0.0; d + 1]], [vec![0.0; d + 1], vec![0.0; d + 1]]]);
        for a in 0..2 {
            self.c.stream[a].push(vec![vec![0.0; d]; t + 1]);
            self.c.basis[a].push(vec![vec![0.0; d]; t + 1]);
        }
        self.g.seeds[t][0][0][0] = self.cfg.inputs[t];
    }

    /// Gaussian pair of the step-`t` and step-`s` preactivations at layer
    /// `l`, from the forward stream covariances entering the layer.
    fn preactivation_pair(&self, t: usize, s: usize, l: usize, diag_t: f64, cross: f64) -> Result<GaussPair, NonlinearError> {
        let c22 = if s == t { diag_t } else { self.c.stream[0][s][s][l - 1] };
        GaussPair { c11: diag_t, c12: cross, c22 }
            .sanitized()
            .map_err(|source| NonlinearError::Kernel { step: t, layer: l, source })
    }

    fn forward_sweep(&mut self, t: usize) -> Result<(), NonlinearError> {
        let d = self.cfg.depth;
        let inv_l = 1.0 / d as f64;
        for l in 1..=d {
            // Covariances of the streams entering layer l, then the
            // activation kernels of each preactivation pair: the centered
            // covariance seeds this layer's dictionary member pairings, the
            // derivative pairing weights the interaction corrections.
            let vals: Vec<f64> = (0..=t).map(|s| dictionary_cov(&self.g, &self.c, 0, l - 1, t, s)).collect();
            let mut prime = vec![0.0; t];
            for s in 0..=t {
                self.c.stream[0][t][s][l - 1] = vals[s];
                let pair = self.preactivation_pair(t, s, l, vals[t], vals[s])?;
                self.c.basis[0][t][s][l - 1] = v_phi_c(self.cfg.phi, &pair);
                if s < t {
                    prime[s] = v_phi_prime(self.cfg.phi, &pair);
                }
            }
            // Interaction with each earlier step's update at layer l:
            // passthrough correlation minus eta times the stream overlap that
            // drove the update, the whole correction entering through the
            // activation derivative.
            let factors: Vec<f64> = (0..t)
                .map(|s| {
                    inv_l * prime[s] * (self.g.coefficient(t, s, 0, 1, l - 1, l) - self.cfg.eta * vals[s])
                })
                .collect();

            let (head, tail) = self.g.grids.split_at_mut(t);
            let cur = &mut tail[0];
            for r in 0..=t {
                for b in 0..2 {
                    let grid = &mut cur[r][0][b];
                    grid.copy_within((l - 1) * d..l * d, l * d);
                    if r == t && b == 0 {
                        grid[l * d + (l - 1)] += 1.0;
                    }
                }
            }
            for s in 0..t {
                let fac = factors[s];
                if fac == 0.0 {
                    continue;
                }
                for r in 0..=s {
                    for b in 0..2 {
                        let src = &head[s][r][1][b][l * d..(l + 1) * d];
                        let dst = &mut cur[r][0][b][l * d..(l + 1) * d];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += fac * sv;
                        }
                    }
                }
            }
            let (shead, stail) = self.g.seeds.split_at_mut(t);
            let scur = &mut stail[0];
            for b in 0..2 {
                let mut v = scur[0][b][l - 1];
                for s in 0..t {
                    v += factors[s] * shead[s][1][b][l];
                }
                scur[0][b][l] = v;
            }
        }
        Ok(())
    }

    fn backward_sweep(&mut self, t: usize, chi: f64) -> Result<(), NonlinearError> {
        let d = self.cfg.depth;
        let inv_l = 1.0 / d as f64;
        self.g.seeds[t][1][1][d] = chi;
        for l in (1..=d).rev() {
            // Covariances of the backward streams leaving layer l. Their
            // dictionary members carry the activation derivative, so the
            // member pairing is the derivative pairing of the forward
            // preactivations times the backward stream covariance.
            let vals: Vec<f64> = (0..=t).map(|s| dictionary_cov(&self.g, &self.c, 1, l, t, s)).collect();
            let diag_t = self.c.stream[0][t][t][l - 1];
            let mut prime = vec![0.0; t + 1];
            let mut pass = vec![0.0; t];
            for s in 0..=t {
                self.c.stream[1][t][s][l - 1] = vals[s];
                let pair = self.preactivation_pair(t, s, l, diag_t, self.c.stream[0][t][s][l - 1])?;
                prime[s] = v_phi_prime(self.cfg.phi, &pair);
                self.c.basis[1][t][s][l - 1] = prime[s] * vals[s];
                if s < t {
                    pass[s] = v_c_prime(self.cfg.phi, &pair, self.cfg.variant);
                }
            }
            let factors: Vec<f64> = (0..t)
                .map(|s| {
                    inv_l * (pass[s] * self.g.coefficient(t, s, 1, 0, l, l) - self.cfg.eta * prime[s] * vals[s])
                })
                .collect();

            let (head, tail) = self.g.grids.split_at_mut(t);
            let cur = &mut tail[0];
            for r in 0..=t {
                for b in 0..2 {
                    let grid = &mut cur[r][1][b];
                    grid.copy_within(l * d..(l + 1) * d, (l - 1) * d);
                    if r == t && b == 1 {
                        grid[(l - 1) * d + (l - 1)] += 1.0;
                    }
                }
            }
            for s in 0..t {
                let fac = factors[s];
                if fac == 0.0 {
                    continue;
                }
                for r in 0..=s {
                    for b in 0..2 {
                        let src = &head[s][r][0][b][(l - 1) * d..l * d];
                        let dst = &mut cur[r][1][b][(l - 1) * d..l * d];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += fac * sv;
                        }
                    }
                }
            }
            let (shead, stail) = self.g.seeds.split_at_mut(t);
            let scur = &mut stail[0];
            for b in 0..2 {
                let mut v = scur[1][b][l];
                for s in 0..t {
                    v += factors[s] * shead[s][0][b][l - 1];
                }
                scur[1][b][l - 1] = v;
            }
        }
        Ok(())
    }
}
