//! Explicit-matrix engine: init, forward with activation cache, exact
//! reverse-mode gradients, and one fused train step.

use crate::steplog::StepRecord;
use crate::{Batch, NetConfig, Phi, Placement, SimError, Targets, LN_EPSILON};
use entrywise_optim::{apply_update, OptimizerState, UpdateRule};
use ndarray::Array2;
use parametrization::{Group, Parametrization};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

/// All trainable tensors plus per-tensor optimizer state.
///
/// Shapes: `u` is `n x d_in`, `v` is `n x d_out`, `w[l][j]` is `n x n` for
/// block `l` and in-block layer `j`.
#[derive(Debug, Clone)]
pub struct NetState {
    pub cfg: NetConfig,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub w: Vec<Vec<Array2<f64>>>,
    pub opt_u: OptimizerState,
    pub opt_v: OptimizerState,
    pub opt_w: Vec<Vec<OptimizerState>>,
    pub seed: u64,
    pub step: u64,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Array2<f64>,
    /// Residual stream, `l + 1` entries of `n x B`; `xs[0]` is `U xi`.
    pub xs: Vec<Array2<f64>>,
    /// Block input after optional pre-LayerNorm.
    pub block_inputs: Vec<Array2<f64>>,
    /// Centered pre-normalization activations, one per block (LayerNorm only).
    pub ln_y: Vec<Array2<f64>>,
    /// Per-column root mean square `r` (LayerNorm only), one `Vec<f64>` of
    /// length `B` per block.
    pub ln_r: Vec<Vec<f64>>,
    /// Preactivations `h_j = W_j z_{j-1}`, `k` per block (post placement only).
    pub hs: Vec<Vec<Array2<f64>>>,
    /// Network output, `d_out x B`.
    pub f: Array2<f64>,
}

/// Raw loss gradients (batch means). `du`/`dv` are `None` when the embedding
/// and readout are frozen.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub du: Option<Array2<f64>>,
    pub dv: Option<Array2<f64>>,
    pub dw: Vec<Vec<Array2<f64>>>,
}

/// Samples a fresh network. Entry variances follow the maximal-update
/// widthwise table: `U ~ N(0, 1)`, `V ~ N(0, n^{-2})`, `W ~ N(0, n^{-1})`.
/// Each tensor draws from its own ChaCha stream of `seed`, so adding blocks
/// does not shift the draws of existing tensors.
pub fn init(cfg: &NetConfig, rule: &UpdateRule, seed: u64) -> Result<NetState, SimError> {
    cfg.validate()?;
    rule.validate()?;
    let n = cfg.n;
    let u = sample_matrix(seed, 1, n, cfg.d_in, 1.0);
    let v = sample_matrix(seed, 2, n, cfg.d_out, 1.0 / n as f64);
    let mut w = Vec::with_capacity(cfg.l);
    let mut opt_w = Vec::with_capacity(cfg.l);
    for block in 0..cfg.l {
        let mut layers = Vec::with_capacity(cfg.k);
        let mut opts = Vec::with_capacity(cfg.k);
        for j in 0..cfg.k {
            let stream = 16 + (block * cfg.k + j) as u64;
            layers.push(sample_matrix(seed, stream, n, n, (1.0 / n as f64).sqrt()));
            opts.push(OptimizerState::new(rule, n * n));
        }
        w.push(layers);
        opt_w.push(opts);
    }
    Ok(NetState {
        cfg: *cfg,
        opt_u: OptimizerState::new(rule, n * cfg.d_in),
        opt_v: OptimizerState::new(rule, n * cfg.d_out),
        u,
        v,
        w,
        opt_w,
        seed,
        step: 0,
    })
}

fn sample_matrix(seed: u64, stream: u64, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
}

fn phi_map(phi: Phi, x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| phi.eval(v))
}

/// Runs the residual stack on a `d_in x B` input block.
pub fn forward(
    state: &NetState,
    p: &Parametrization,
    inputs: &Array2<f64>,
) -> Result<ForwardCache, SimError> {
    let cfg = &state.cfg;
    if inputs.nrows() != cfg.d_in {
        return Err(SimError::ShapeMismatch("input rows != d_in"));
    }
    let mult = p.branch_multiplier(cfg.l as u32)?;
    let n = cfg.n;

    let mut xs = Vec::with_capacity(cfg.l + 1);
    xs.push(state.u.dot(inputs));
    let mut block_inputs = Vec::with_capacity(cfg.l);
    let mut ln_y = Vec::new();
    let mut ln_r = Vec::new();
    let mut hs = Vec::with_capacity(cfg.l);

    for l in 0..cfg.l {
        let x = &xs[l];
        let z0 = if cfg.pre_layernorm {
            let mut y = x.clone();
            crate::ms_columns(&mut y);
            let mut r = Vec::with_capacity(y.ncols());
            let mut z = y.clone();
            for mut col in z.columns_mut() {
                let msq = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
                let rc = (msq + LN_EPSILON).sqrt();
                col.mapv_inplace(|v| v / rc);
                r.push(rc);
            }
            ln_y.push(y);
            ln_r.push(r);
            z
        } else {
            x.clone()
        };

        let mut g;
        match cfg.placement {
            Placement::Post => {
                let mut block_hs = Vec::with_capacity(cfg.k);
                let mut cur = z0.clone();
                for j in 0..cfg.k {
                    let h = state.w[l][j].dot(&cur);
                    cur = phi_map(cfg.phi, &h);
                    block_hs.push(h);
                }
                hs.push(block_hs);
                g = cur;
            }
            Placement::Pre => {
                g = state.w[l][0].dot(&phi_map(cfg.phi, &z0));
                hs.push(Vec::new());
            }
        }
        if cfg.mean_subtraction {
            crate::ms_columns(&mut g);
        }
        block_inputs.push(z0);

        let x_next = x + &(g * mult);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { layer: l + 1 });
        }
        xs.push(x_next);
    }

    let f = state.v.t().dot(&xs[cfg.l]);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { layer: cfg.l });
    }
    Ok(ForwardCache { inputs: inputs.clone(), xs, block_inputs, ln_y, ln_r, hs, f })
}

/// Exact reverse-mode gradients of the batch-mean loss given the per-sample
/// output sensitivities `chi` (`d_out x B`, not yet divided by `B`).
pub fn backward(
    state: &NetState,
    p: &Parametrization,
    cache: &ForwardCache,
    chi: &Array2<f64>,
) -> Result<Gradients, SimError> {
    let cfg = &state.cfg;
    let b = chi.ncols() as f64;
    let n = cfg.n as f64;
    let mult = p.branch_multiplier(cfg.l as u32)?;

    let mut dx = state.v.dot(chi);
    let dv = cfg.train_io.then(|| into_standard(cache.xs[cfg.l].dot(&chi.t())) / b);

    let mut dw: Vec<Vec<Array2<f64>>> = Vec::with_capacity(cfg.l);
    for _ in 0..cfg.l {
        dw.push(Vec::new());
    }

    for l in (0..cfg.l).rev() {
        let mut dg = &dx * mult;
        if cfg.mean_subtraction {
            // The projector is symmetric, so its adjoint is itself.
            crate::ms_columns(&mut dg);
        }
        let z0 = &cache.block_inputs[l];
        let dz0;
        match cfg.placement {
            Placement::Post => {
                let mut grads = vec![Array2::zeros((0, 0)); cfg.k];
                let mut dcur = dg;
                for j in (0..cfg.k).rev() {
                    let dh = &cache.hs[l][j].mapv(|v| cfg.phi.deriv(v)) * &dcur;
                    let z_prev = if j == 0 {
                        z0.clone()
                    } else {
                        phi_map(cfg.phi, &cache.hs[l][j - 1])
                    };
                    grads[j] = into_standard(dh.dot(&z_prev.t())) / b;
                    dcur = state.w[l][j].t().dot(&dh);
                }
                dw[l] = grads;
                dz0 = dcur;
            }
            Placement::Pre => {
                let phi_z = phi_map(cfg.phi, z0);
                dw[l] = vec![into_standard(dg.dot(&phi_z.t())) / b];
                dz0 = &z0.mapv(|v| cfg.phi.deriv(v)) * &state.w[l][0].t().dot(&dg);
            }
        }
        if cfg.pre_layernorm {
            let y = &cache.ln_y[l];
            let mut contrib = dz0;
            crate::ms_columns(&mut contrib);
            for (c, mut col) in contrib.columns_mut().into_iter().enumerate() {
                let r = cache.ln_r[l][c];
                let yc = y.column(c);
                let dot = yc.dot(&col);
                let shrink = dot / (n * r * r * r);
                for (ci, &yi) in col.iter_mut().zip(yc.iter()) {
                    *ci = *ci / r - yi * shrink;
                }
            }
            dx += &contrib;
        } else {
            dx += &dz0;
        }
    }

    let du = cfg.train_io.then(|| into_standard(dx.dot(&cache.inputs.t())) / b);
    Ok(Gradients { du, dv, dw })
}

/// One training step on `batch`: forward, loss, backward, entrywise update.
/// Returns the scalar step record.
pub fn train_step(
    state: &mut NetState,
    p: &Parametrization,
    rule: &UpdateRule,
    batch: &Batch,
) -> Result<StepRecord, SimError> {
    let cache = forward(state, p, &batch.inputs)?;
    let (loss, chi) = crate::loss_and_chi(state.cfg.loss, &cache.f, &batch.targets)?;
    let grads = backward(state, p, &cache, &chi)?;
    let record = StepRecord {
        step: state.step,
        loss,
        f_norm: rms(&cache.f),
        chi_norm: rms(&chi),
        layer_rms: layer_rms_slots(&cache.xs),
    };
    apply_gradients(state, p, rule, &grads)?;
    state.step += 1;
    Ok(record)
}

fn apply_gradients(
    state: &mut NetState,
    p: &Parametrization,
    rule: &UpdateRule,
    grads: &Gradients,
) -> Result<(), SimError> {
    let depth = state.cfg.l as u32;
    let width = state.cfg.n as u32;
    for l in 0..state.cfg.l {
        for j in 0..state.cfg.k {
            apply_update(
                as_slice_mut(&mut state.w[l][j]),
                as_slice(&grads.dw[l][j]),
                p,
                rule,
                &mut state.opt_w[l][j],
                depth,
                width,
                Group::Hidden,
            )?;
        }
    }
    if let Some(du) = &grads.du {
        apply_update(
            as_slice_mut(&mut state.u),
            as_slice(du),
            p,
            rule,
            &mut state.opt_u,
            depth,
            width,
            Group::Input,
        )?;
    }
    if let Some(dv) = &grads.dv {
        apply_update(
            as_slice_mut(&mut state.v),
            as_slice(dv),
            p,
            rule,
            &mut state.opt_v,
            depth,
            width,
            Group::Output,
        )?;
    }
    Ok(())
}

fn as_slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// `dot` yields column-major output when the contracted dimension is 1
/// (outer products at batch size 1), so gradients are re-laid-out here.
fn into_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.dim();
        Array2::from_shape_vec(dim, a.iter().copied().collect()).expect("shape preserved")
    }
}

fn as_slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Root mean square over all entries.
pub fn rms(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

/// Residual-stream RMS at depths `{0, L/4, L/2, 3L/4, L}`.
pub fn layer_rms_slots(xs: &[Array2<f64>]) -> [f64; 5] {
    let l = xs.len() - 1;
    [0, l / 4, l / 2, 3 * l / 4, l].map(|i| rms(&xs[i]))
}

/// Final residual-stream activations `x^L` (`n x B`) for probe inputs,
/// without touching optimizer state.
pub fn feature_snapshot(
    state: &NetState,
    p: &Parametrization,
    inputs: &Array2<f64>,
) -> Result<Array2<f64>, SimError> {
    let cache = forward(state, p, inputs)?;
    Ok(cache.xs[state.cfg.l].clone())
}

/// Mean column-wise loss on a batch without updating anything.
pub fn eval_loss(
    state: &NetState,
    p: &Parametrization,
    batch: &Batch,
) -> Result<f64, SimError> {
    let cache = forward(state, p, &batch.inputs)?;
    let (loss, _) = crate::loss_and_chi(state.cfg.loss, &cache.f, &batch.targets)?;
    Ok(loss)
}

/// Classification accuracy (argmax of `f`) on a batch.
pub fn eval_accuracy(
    state: &NetState,
    p: &Parametrization,
    batch: &Batch,
) -> Result<f64, SimError> {
    let Targets::Classes(classes) = &batch.targets else {
        return Err(SimError::ShapeMismatch("accuracy needs class targets"));
    };
    let cache = forward(state, p, &batch.inputs)?;
    let mut hits = 0usize;
    for (j, &y) in classes.iter().enumerate() {
        let col = cache.f.column(j);
        let mut arg = 0;
        for i in 1..col.len() {
            if col[i] > col[arg] {
                arg = i;
            }
        }
        if arg == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / classes.len() as f64)
}
