//! Deterministic infinite-width training dynamics of the linear residual
//! stream.
//!
//! When the width of the residual network goes to infinity (depth stays
//! finite), every forward feature vector and every backward sensitivity
//! vector lives in the span of a fixed Gaussian dictionary: the embedded
//! input direction, the readout direction, and one fresh image per layer of
//! the frozen initial matrix (or its transpose) applied to each earlier
//! stream. Gradient updates never leave that span, so an entire training run
//! is described exactly by
//!
//! * coefficient grids of each step's streams over the dictionary
//!   ([`GammaTable`]), and
//! * covariance tables of the dictionary members themselves ([`CTable`]).
//!
//! [`run_depth_mup`] and [`run_generalized`] evolve both, layer by layer and
//! step by step, with no sampling and no width parameter. The output is the
//! exact large-width limit of scalar-stream SGD training with squared loss at
//! the requested depth; widthwise the update scales follow the maximal
//! feature-learning table, and the depthwise branch and learning-rate
//! exponents `(alpha, gamma)` are free as long as initialization is stable
//! (`alpha >= 1/2`).
//!
//! Conventions: the branch prefactor is `L^{-alpha}` with no base-depth
//! rescaling, the readout is frozen, and inputs are scalars embedded along a
//! fixed direction, so one training step consumes one `(input, target)` pair.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use thiserror::Error;

/// Upper bound on the memory the coefficient and covariance tables may take.
pub const TABLE_BYTE_BUDGET: u128 = 2_600_000_000;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("branch exponent alpha = {alpha} makes initialization grow with depth; alpha >= 1/2 is required")]
    UnstableInit { alpha: f64 },
    #[error("tables for depth {depth}, {steps} steps need about {need} bytes, over the {TABLE_BYTE_BUDGET} byte budget")]
    Capacity { depth: usize, steps: usize, need: u128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One infinite-width run: depth, depthwise exponents, learning rate, and the
/// scalar data stream (one pair per optimization step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    pub depth: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl LimitConfig {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    fn validate(&self) -> Result<(), LimitError> {
        if self.depth == 0 {
            return Err(LimitError::InvalidConfig("depth must be at least 1"));
        }
        if self.depth > 4096 {
            return Err(LimitError::InvalidConfig("depth above 4096 is not supported"));
        }
        if self.inputs.is_empty() {
            return Err(LimitError::InvalidConfig("at least one training step is required"));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(LimitError::InvalidConfig("inputs and targets must have equal length"));
        }
        if self.inputs.len() > 64 {
            return Err(LimitError::InvalidConfig("more than 64 steps is not supported"));
        }
        let finite = self.alpha.is_finite()
            && self.gamma.is_finite()
            && self.eta.is_finite()
            && self.inputs.iter().all(|x| x.is_finite())
            && self.targets.iter().all(|y| y.is_finite());
        if !finite {
            return Err(LimitError::InvalidConfig("all parameters and data must be finite"));
        }
        let need = estimate_table_bytes(self.depth, self.steps());
        if need > TABLE_BYTE_BUDGET {
            return Err(LimitError::Capacity { depth: self.depth, steps: self.steps(), need });
        }
        Ok(())
    }
}

/// Approximate heap footprint of the tables for a run of this size.
pub fn estimate_table_bytes(depth: usize, steps: usize) -> u128 {
    let d = depth as u128;
    let t = steps as u128;
    let pairs = t * (t + 1) / 2;
    let grids = pairs * 4 * (d + 1) * d * 8;
    let seeds = t * 4 * (d + 1) * 8;
    let covs = 2 * pairs * d * 8;
    grids + seeds + covs
}

/// Coefficients of every stream over the Gaussian dictionary.
///
/// Indices: `t` is the optimization step that produced the stream, `r` the
/// step whose streams seeded the dictionary members, `a` selects the forward
/// (`0`) or backward (`1`) stream, and `b` the dictionary family: images of
/// the frozen layer matrices (`0`) or of their transposes (`1`). For each
/// `(t, r, a, b)` the grid holds one row per layer position `p = 0..=depth`
/// and one column per dictionary layer `m = 1..=depth`. Coefficients over the
/// two global directions (embedded input and readout) are kept per `(t, a)`
/// as vectors over `p`; they have no layer column.
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

    /// Number of steps recorded so far.
    pub fn steps(&self) -> usize {
        self.grids.len()
    }

    /// Grid coefficient at row `p` (layer position) and column `m`
    /// (dictionary layer, `1..=depth`). Streams never load on dictionary
    /// members seeded by later steps, so `r > t` reads as zero.
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

/// Covariance tables of the dictionary members.
///
/// `value(0, t, s, m)` is the inner product of the step-`t` and step-`s`
/// forward streams entering layer `m`; `value(1, t, s, m)` the inner product
/// of the backward streams leaving layer `m`. Both are symmetric in `(t, s)`.
#[derive(Debug, Clone)]
pub struct CTable {
    depth: usize,
    tables: [Vec<Vec<Vec<f64>>>; 2],
}

impl CTable {
    fn new(depth: usize) -> Self {
        CTable { depth, tables: [Vec::new(), Vec::new()] }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn steps(&self) -> usize {
        self.tables[0].len()
    }

    /// Covariance at dictionary layer `m` (1-based).
    pub fn value(&self, a: usize, t: usize, s: usize, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.depth, "layer m is 1-based");
        self.slice(a, t, s)[m - 1]
    }

    fn slice(&self, a: usize, t: usize, s: usize) -> &[f64] {
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        &self.tables[a][hi][lo]
    }
}

/// Everything a run produces: per-step outputs, errors, losses, layer
/// covariance profiles, the output kernel, and the raw tables.
#[derive(Debug, Clone)]
pub struct LimitTrace {
    pub config: LimitConfig,
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

impl LimitTrace {
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
    pub fn write_step_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), LimitError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,f,chi,loss")?;
        for t in 0..self.steps() {
            writeln!(w, "{t},{},{},{}", fmt(self.f[t]), fmt(self.chi[t]), fmt(self.losses[t]))?;
        }
        Ok(w.flush()?)
    }

    /// Layer profiles as CSV: `step,layer,cov,rms`.
    pub fn write_profile_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), LimitError> {
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
    pub fn write_kernel_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), LimitError> {
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

/// Run the limit at the depthwise feature-learning point
/// `alpha = gamma = 1/2`, with the branch coefficient `1/sqrt(L)` and update
/// prefactor `1/L` written out literally.
pub fn run_depth_mup(
    depth: usize,
    eta: f64,
    inputs: &[f64],
    targets: &[f64],
) -> Result<LimitTrace, LimitError> {
    let cfg = LimitConfig {
        depth,
        alpha: 0.5,
        gamma: 0.5,
        eta,
        inputs: inputs.to_vec(),
        targets: targets.to_vec(),
    };
    cfg.validate()?;
    let corr = 1.0 / depth as f64;
    Engine::run(cfg, 1.0, corr, 1.0)
}

/// Run the limit at arbitrary stable depthwise exponents. The dictionary
/// coefficient of each fresh direction is `L^{1/2 - alpha}`, interaction
/// corrections carry `L^{-alpha - gamma}`, and the frozen-matrix passthrough
/// inside a correction carries `L^{gamma - 1/2}`.
pub fn run_generalized(cfg: &LimitConfig) -> Result<LimitTrace, LimitError> {
    cfg.validate()?;
    if cfg.alpha < 0.5 - 1e-12 {
        return Err(LimitError::UnstableInit { alpha: cfg.alpha });
    }
    let lf = cfg.depth as f64;
    let ind = lf.powf(0.5 - cfg.alpha);
    let corr = lf.powf(-cfg.alpha - cfg.gamma);
    let cross = lf.powf(cfg.gamma - 0.5);
    Engine::run(cfg.clone(), ind, corr, cross)
}

/// Covariance of two streams from their dictionary decompositions: global
/// direction products plus, for every dictionary member both sides can load
/// on, coefficient x member-covariance x coefficient, averaged over layers.
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
                let mid = c.slice(b, tp, sp);
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
    cfg: LimitConfig,
    /// Coefficient of a fresh dictionary direction when a stream first
    /// crosses its layer.
    ind: f64,
    /// Prefactor of every interaction correction.
    corr: f64,
    /// Weight of the frozen-matrix passthrough term inside a correction.
    cross: f64,
    g: GammaTable,
    c: CTable,
}

impl Engine {
    fn run(cfg: LimitConfig, ind: f64, corr: f64, cross: f64) -> Result<LimitTrace, LimitError> {
        let depth = cfg.depth;
        let steps = cfg.steps();
        let mut e = Engine { cfg, ind, corr, cross, g: GammaTable::new(depth), c: CTable::new(depth) };
        let mut f = Vec::with_capacity(steps);
        let mut chi = Vec::with_capacity(steps);
        let mut losses = Vec::with_capacity(steps);
        let mut layer_cov = Vec::with_capacity(steps);
        let mut kernel = vec![vec![0.0; steps]; steps];

        for t in 0..steps {
            e.push_step(t);
            e.forward_sweep(t);
            let ft = e.g.seeds[t][0][1][depth];
            let ct = ft - e.cfg.targets[t];
            f.push(ft);
            chi.push(ct);
            losses.push(0.5 * ct * ct);

            let mut profile = Vec::with_capacity(depth + 1);
            for l in 0..depth {
                profile.push(e.c.tables[0][t][t][l]);
            }
            profile.push(dictionary_cov(&e.g, &e.c, 0, depth, t, t));
            for s in 0..t {
                let v = dictionary_cov(&e.g, &e.c, 0, depth, t, s);
                kernel[t][s] = v;
                kernel[s][t] = v;
            }
            kernel[t][t] = profile[depth];
            layer_cov.push(profile);

            e.backward_sweep(t, ct);
        }

        Ok(LimitTrace { config: e.cfg, f, chi, losses, layer_cov, kernel, gamma: e.g, c: e.c })
    }

    fn push_step(&mut self, t: usize) {
        let d = self.cfg.depth;
        let cell = || [[vec![0.0; (d + 1) * d], vec![0.0; (d + 1) * d]], [vec![0.0; (d + 1) * d], vec![0.0; (d + 1) * d]]];
        self.g.grids.push((0..=t).map(|_| cell()).collect());
        self.g.seeds.push([[vec![0.0; d + 1], vec![0.0; d + 1]], [vec![0.0; d + 1], vec![0.0; d + 1]]]);
        self.c.tables[0].push(vec![vec![0.0; d]; t + 1]);
        self.c.tables[1].push(vec![vec![0.0; d]; t + 1]);
        self.g.seeds[t][0][0][0] = self.cfg.inputs[t];
    }

    fn forward_sweep(&mut self, t: usize) {
        let d = self.cfg.depth;
        for l in 1..=d {
            // Covariances of the streams entering layer l.
            let vals: Vec<f64> = (0..=t).map(|s| dictionary_cov(&self.g, &self.c, 0, l - 1, t, s)).collect();
            for s in 0..=t {
                self.c.tables[0][t][s][l - 1] = vals[s];
            }
            // Interaction of this stream with each earlier step's update at
            // layer l: passthrough correlation minus eta times the stream
            // overlap that drove the update.
            let factors: Vec<f64> = (0..t)
                .map(|s| {
                    self.corr
                        * (self.cross * self.g.coefficient(t, s, 0, 1, l - 1, l) - self.cfg.eta * vals[s])
                })
                .collect();

            let (head, tail) = self.g.grids.split_at_mut(t);
            let cur = &mut tail[0];
            for r in 0..=t {
                for b in 0..2 {
                    let grid = &mut cur[r][0][b];
                    grid.copy_within((l - 1) * d..l * d, l * d);
                    if r == t && b == 0 {
                        grid[l * d + (l - 1)] += self.ind;
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
    }

    fn backward_sweep(&mut self, t: usize, chi: f64) {
        let d = self.cfg.depth;
        self.g.seeds[t][1][1][d] = chi;
        for l in (1..=d).rev() {
            // Covariances of the backward streams leaving layer l.
            let vals: Vec<f64> = (0..=t).map(|s| dictionary_cov(&self.g, &self.c, 1, l, t, s)).collect();
            for s in 0..=t {
                self.c.tables[1][t][s][l - 1] = vals[s];
            }
            let factors: Vec<f64> = (0..t)
                .map(|s| {
                    self.corr
                        * (self.cross * self.g.coefficient(t, s, 1, 0, l, l) - self.cfg.eta * vals[s])
                })
                .collect();

            let (head, tail) = self.g.grids.split_at_mut(t);
            let cur = &mut tail[0];
            for r in 0..=t {
                for b in 0..2 {
                    let grid = &mut cur[r][1][b];
                    grid.copy_within(l * d..(l + 1) * d, (l - 1) * d);
                    if r == t && b == 1 {
                        grid[(l - 1) * d + (l - 1)] += self.ind;
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
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_estimate_grows_with_depth_and_steps() {
        let base = estimate_table_bytes(64, 5);
        assert!(estimate_table_bytes(128, 5) > base);
        assert!(estimate_table_bytes(64, 10) > base);
        // A depth-512, 11-step run must stay within the budget.
        assert!(estimate_table_bytes(512, 11) <= TABLE_BYTE_BUDGET);
    }

    #[test]
    fn oversized_runs_are_refused() {
        let cfg = LimitConfig {
            depth: 4096,
            alpha: 0.5,
            gamma: 0.5,
            eta: 1.0,
            inputs: vec![1.0; 24],
            targets: vec![0.0; 24],
        };
        match run_generalized(&cfg) {
            Err(LimitError::Capacity { .. }) => {}
            other => panic!("expected a capacity refusal, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_catches_shape_errors() {
        let bad = LimitConfig {
            depth: 0,
            alpha: 0.5,
            gamma: 0.5,
            eta: 1.0,
            inputs: vec![1.0],
            targets: vec![0.0],
        };
        assert!(matches!(run_generalized(&bad), Err(LimitError::InvalidConfig(_))));
        let mismatched = LimitConfig { depth: 4, inputs: vec![1.0, 2.0], targets: vec![0.0], ..bad.clone() };
        assert!(matches!(run_generalized(&mismatched), Err(LimitError::InvalidConfig(_))));
        let unstable = LimitConfig { depth: 4, alpha: 0.25, ..bad };
        assert!(matches!(run_generalized(&unstable), Err(LimitError::UnstableInit { .. })));
    }

    #[test]
    fn coefficients_of_later_steps_read_as_zero() {
        let trace = run_depth_mup(3, 1.0, &[1.0, -1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(trace.gamma.coefficient(0, 1, 0, 0, 2, 1), 0.0);
        assert_eq!(trace.c.value(0, 1, 0, 2), trace.c.value(0, 0, 1, 2));
    }
}
