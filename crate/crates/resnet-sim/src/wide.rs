//! Scalar-stream engine for very large widths.
//!
//! Training with one scalar input per step, batch size 1, block depth 1, and
//! SGD touches each hidden matrix only through matrix-vector products, and
//! every update is rank one. Representing `W^l = W_0^l + sum_s coef * dh_s
//! z_s^T` explicitly and sampling the `W_0` products lazily makes width
//! `2^13` runs cost `O(n)` per query instead of `O(n^2)` memory.

use crate::{ms_in_place, Phi, SimError};
use parametrization::{Group, Parametrization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Matrix seen only through products. Implementations may be stateful
/// (the lazy sampler realizes entries on demand).
pub trait MatOp {
    /// `W v`.
    fn forward(&mut self, v: &[f64]) -> Vec<f64>;
    /// `W^T u`.
    fn transpose(&mut self, u: &[f64]) -> Vec<f64>;
    fn width(&self) -> usize;
}

/// Exact lazy sampler for an `n x n` Gaussian matrix with entry variance
/// `1/n`, queried only through `W v` and `W^T u`.
///
/// The conditional law of a product given all previous queries splits into a
/// part pinned by transpose consistency (`u^T (W v) = (W^T u)^T v`) and a
/// fresh Gaussian part orthogonal to the span of the opposite-side probes:
/// for a unit right probe `e` orthogonal to all previous right probes,
///
/// ```text
/// W e | history  =  sum_j u_j (q_j . e)  +  P_perp g,    g ~ N(0, I_n / n),
/// ```
///
/// where `u_j` are the orthonormal left probes, `q_j = W^T u_j` their
/// realized images, and `P_perp` projects orthogonally to `span{u_j}`. The
/// transpose direction is symmetric. Samples agree with a materialized
/// matrix in distribution, not entry by entry.
pub struct LazyGaussian {
    n: usize,
    entry_std: f64,
    rng: ChaCha12Rng,
    /// Orthonormal right probe directions and their realized images `W e_i`.
    basis_v: Vec<Vec<f64>>,
    image_r: Vec<Vec<f64>>,
    /// Orthonormal left probe directions and their realized images `W^T u_j`.
    basis_u: Vec<Vec<f64>>,
    image_q: Vec<Vec<f64>>,
}

/// Relative residual below which a probe counts as already spanned.
const IN_SPAN_TOL: f64 = 1e-9;

impl LazyGaussian {
    pub fn new(n: usize, seed: u64, stream: u64) -> Self {
        assert!(n > 0, "width must be positive");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        LazyGaussian {
            n,
            entry_std: (1.0 / n as f64).sqrt(),
            rng,
            basis_v: Vec::new(),
            image_r: Vec::new(),
            basis_u: Vec::new(),
            image_q: Vec::new(),
        }
    }

    /// Number of realized probe directions (right + left).
    pub fn realized_rank(&self) -> usize {
        self.basis_v.len() + self.basis_u.len()
    }

    fn query(&mut self, probe: &[f64], right_side: bool) -> Vec<f64> {
        assert_eq!(probe.len(), self.n, "probe length mismatch");
        let norm = l2(probe);
        if norm == 0.0 {
            return vec![0.0; self.n];
        }
        let (basis, images) = if right_side {
            (&self.basis_v, &self.image_r)
        } else {
            (&self.basis_u, &self.image_q)
        };
        let mut perp = probe.to_vec();
        let mut coeffs = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (c, b) in coeffs.iter_mut().zip(basis) {
                let extra = dot(b, &perp);
                *c += extra;
                axpy(&mut perp, -extra, b);
            }
        }
        let mut result = vec![0.0; self.n];
        for (&c, img) in coeffs.iter().zip(images) {
            axpy(&mut result, c, img);
        }
        let rho = l2(&perp);
        if rho <= IN_SPAN_TOL * norm {
            return result;
        }
        let probe_new: Vec<f64> = perp.iter().map(|x| x / rho).collect();
        // Fresh noise orthogonal to the opposite-side probes plus the
        // component pinned by the realized opposite-side images.
        let std = self.entry_std;
        let rng = &mut self.rng;
        let mut image_new: Vec<f64> =
            (0..self.n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        let (opp_basis, opp_images) = if right_side {
            (&self.basis_u, &self.image_q)
        } else {
            (&self.basis_v, &self.image_r)
        };
        project_out(&mut image_new, opp_basis);
        project_out(&mut image_new, opp_basis);
        for (b, img) in opp_basis.iter().zip(opp_images) {
            axpy(&mut image_new, dot(img, &probe_new), b);
        }
        axpy(&mut result, rho, &image_new);
        if right_side {
            self.basis_v.push(probe_new);
            self.image_r.push(image_new);
        } else {
            self.basis_u.push(probe_new);
            self.image_q.push(image_new);
        }
        result
    }
}

impl MatOp for LazyGaussian {
    fn forward(&mut self, v: &[f64]) -> Vec<f64> {
        self.query(v, true)
    }

    fn transpose(&mut self, u: &[f64]) -> Vec<f64> {
        self.query(u, false)
    }

    fn width(&self) -> usize {
        self.n
    }
}

/// Materialized matrix behind the same interface, for cross-validation.
pub struct DenseOp {
    pub matrix: ndarray::Array2<f64>,
}

impl DenseOp {
    /// Samples an `n x n` matrix with entry variance `1/n`.
    pub fn sample(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let std = (1.0 / n as f64).sqrt();
        let matrix = ndarray::Array2::from_shape_fn((n, n), |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        DenseOp { matrix }
    }
}

impl MatOp for DenseOp {
    fn forward(&mut self, v: &[f64]) -> Vec<f64> {
        let v = ndarray::ArrayView1::from(v);
        self.matrix.dot(&v).to_vec()
    }

    fn transpose(&mut self, u: &[f64]) -> Vec<f64> {
        let u = ndarray::ArrayView1::from(u);
        self.matrix.t().dot(&u).to_vec()
    }

    fn width(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Architecture of the scalar-stream trainer: block depth 1, post placement,
/// frozen embedding/readout, SGD, squared loss, batch size 1.
#[derive(Debug, Clone, Copy)]
pub struct WideConfig {
    pub n: usize,
    pub l: usize,
    pub phi: Phi,
    pub mean_subtraction: bool,
    /// Keep a copy of the whole residual stream `x^0..x^L` each step.
    pub keep_stream_snapshots: bool,
}

/// Scalars measured during one scalar-stream step (before its update).
#[derive(Debug, Clone)]
pub struct WideStepRecord {
    pub step: usize,
    pub f: f64,
    pub chi: f64,
    pub loss: f64,
    /// `rms(x^l)` for `l = 0..=L`.
    pub rms_profile: Vec<f64>,
}

struct WideLayer<O> {
    op: O,
    /// Per-step block inputs `z_s = x_s^{l-1}`.
    zs: Vec<Vec<f64>>,
    /// Per-step backward vectors `dh_s` (branch multiplier and mean
    /// subtraction included), so `W_t = W_0 + sum_{s<t} coef dh_s z_s^T`.
    dhs: Vec<Vec<f64>>,
}

pub struct WideNet<O: MatOp> {
    pub n: usize,
    pub phi: Phi,
    pub mean_subtraction: bool,
    pub keep_stream_snapshots: bool,
    /// Branch multiplier `a (L/L0)^{-alpha}`.
    pub mult: f64,
    /// Rank-one update coefficient `-eta (L/L0)^{delta-gamma}` (SGD, hidden
    /// group; width factors cancel between update scale and prescale).
    pub coef: f64,
    pub u: Vec<f64>,
    /// Readout scaled by width: entries of `n V` are standard Gaussian and
    /// `f = <x^L, nv> / n`.
    pub nv: Vec<f64>,
    layers: Vec<WideLayer<O>>,
    pub records: Vec<WideStepRecord>,
    /// `x^L` per step, for output-kernel estimates.
    pub final_features: Vec<Vec<f64>>,
    /// Residual stream per step when `keep_stream_snapshots` is on.
    pub stream_snapshots: Vec<Vec<Vec<f64>>>,
}

impl WideNet<LazyGaussian> {
    /// Lazily sampled initial matrices; embedding and readout materialized.
    pub fn lazy(cfg: &WideConfig, p: &Parametrization, seed: u64) -> Result<Self, SimError> {
        let ops = (0..cfg.l).map(|l| LazyGaussian::new(cfg.n, seed, 16 + l as u64)).collect();
        WideNet::with_ops(cfg, p, seed, ops)
    }
}

impl WideNet<DenseOp> {
    /// Materialized initial matrices with the same entry law, for
    /// trajectory-level validation against the dense engine.
    pub fn dense(cfg: &WideConfig, p: &Parametrization, seed: u64) -> Result<Self, SimError> {
        let ops = (0..cfg.l).map(|l| DenseOp::sample(cfg.n, seed, 16 + l as u64)).collect();
        WideNet::with_ops(cfg, p, seed, ops)
    }

    /// Initial matrix of one block, for injecting into the dense engine.
    pub fn layer_matrix(&self, l: usize) -> &ndarray::Array2<f64> {
        &self.layers[l].op.matrix
    }
}

impl<O: MatOp> WideNet<O> {
    pub fn with_ops(
        cfg: &WideConfig,
        p: &Parametrization,
        seed: u64,
        ops: Vec<O>,
    ) -> Result<Self, SimError> {
        if cfg.n == 0 || cfg.l == 0 {
            return Err(SimError::InvalidConfig("width and depth must be >= 1"));
        }
        if ops.len() != cfg.l {
            return Err(SimError::InvalidConfig("one operator per block required"));
        }
        if ops.iter().any(|o| o.width() != cfg.n) {
            return Err(SimError::InvalidConfig("operator width mismatch"));
        }
        let depth = cfg.l as u32;
        let width = cfg.n as u32;
        let mult = p.branch_multiplier(depth)?;
        let coef = -p.effective_update_scale(depth, width, Group::Hidden)?
            * p.grad_prescale(depth, width, Group::Hidden)?;
        let u = sample_std_normal(cfg.n, seed, 1);
        let nv = sample_std_normal(cfg.n, seed, 2);
        Ok(WideNet {
            n: cfg.n,
            phi: cfg.phi,
            mean_subtraction: cfg.mean_subtraction,
            keep_stream_snapshots: cfg.keep_stream_snapshots,
            mult,
            coef,
            u,
            nv,
            layers: ops.into_iter().map(|op| WideLayer { op, zs: Vec::new(), dhs: Vec::new() }).collect(),
            records: Vec::new(),
            final_features: Vec::new(),
            stream_snapshots: Vec::new(),
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn steps_taken(&self) -> usize {
        self.records.len()
    }

    /// One SGD step on the scalar pair `(xi, y)` with squared loss. The
    /// returned record measures the forward pass before the update.
    pub fn train_step(&mut self, xi: f64, y: f64) -> Result<WideStepRecord, SimError> {
        let n = self.n;
        let l_total = self.layers.len();
        let step = self.records.len();

        let mut x: Vec<f64> = self.u.iter().map(|&ui| ui * xi).collect();
        let mut rms_profile = Vec::with_capacity(l_total + 1);
        rms_profile.push(vec_rms(&x));
        let mut zs = Vec::with_capacity(l_total);
        let mut hs = Vec::with_capacity(l_total);
        let mut snapshots = if self.keep_stream_snapshots { vec![x.clone()] } else { Vec::new() };

        for layer in self.layers.iter_mut() {
            let z = x.clone();
            let mut h = layer.op.forward(&z);
            for (zs_s, dh_s) in layer.zs.iter().zip(&layer.dhs) {
                let w = self.coef * dot(zs_s, &z);
                axpy(&mut h, w, dh_s);
            }
            let mut g: Vec<f64> = h.iter().map(|&v| self.phi.eval(v)).collect();
            if self.mean_subtraction {
                ms_in_place(&mut g);
            }
            for (xi_, gi) in x.iter_mut().zip(&g) {
                *xi_ += self.mult * gi;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite { layer: rms_profile.len() });
            }
            rms_profile.push(vec_rms(&x));
            if self.keep_stream_snapshots {
                snapshots.push(x.clone());
            }
            zs.push(z);
            hs.push(h);
        }

        let f = dot(&x, &self.nv) / n as f64;
        let chi = f - y;
        let record = WideStepRecord { step, f, chi, loss: 0.5 * chi * chi, rms_profile };

        // Backward with pre-update weights; append the rank-one updates only
        // after the whole sweep.
        let mut dx: Vec<f64> = self.nv.iter().map(|&vi| vi * chi / n as f64).collect();
        let mut pending: Vec<Vec<f64>> = Vec::with_capacity(l_total);
        for (layer, h) in self.layers.iter_mut().zip(&hs).rev() {
            let mut dg: Vec<f64> = dx.iter().map(|&v| v * self.mult).collect();
            if self.mean_subtraction {
                ms_in_place(&mut dg);
            }
            let dh: Vec<f64> = h.iter().zip(&dg).map(|(&hv, &dv)| self.phi.deriv(hv) * dv).collect();
            let mut dz = layer.op.transpose(&dh);
            for (zs_s, dh_s) in layer.zs.iter().zip(&layer.dhs) {
                let w = self.coef * dot(dh_s, &dh);
                axpy(&mut dz, w, zs_s);
            }
            for (di, zi) in dx.iter_mut().zip(&dz) {
                *di += zi;
            }
            pending.push(dh);
        }
        pending.reverse();
        for (layer, (z, dh)) in self.layers.iter_mut().zip(zs.into_iter().zip(pending)) {
            layer.zs.push(z);
            layer.dhs.push(dh);
        }

        self.final_features.push(x);
        if self.keep_stream_snapshots {
            self.stream_snapshots.push(snapshots);
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Estimate of the limit inner product `<x_s^L, x_t^L>` from stored
    /// features: the dot product divided by the width.
    pub fn output_kernel_estimate(&self, s: usize, t: usize) -> f64 {
        dot(&self.final_features[s], &self.final_features[t]) / self.n as f64
    }
}

fn sample_std_normal(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn vec_rms(a: &[f64]) -> f64 {
    (dot(a, a) / a.len() as f64).sqrt()
}

/// `y += alpha * x`.
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(b, v);
        axpy(v, -c, b);
    }
}
