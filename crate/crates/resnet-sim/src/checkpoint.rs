//! Versioned binary checkpoints: a JSON header describing the run, then raw
//! little-endian f64 tensor payloads in declaration order (`u`, `v`, each
//! `w[l][j]`), then per-tensor optimizer state in the same order.

use crate::{NetConfig, SimError};
use crate::dense::NetState;
use entrywise_optim::{OptimizerState, UpdateRule};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RESCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    cfg: NetConfig,
    rule: UpdateRule,
    seed: u64,
    step: u64,
}

pub fn save(state: &NetState, rule: &UpdateRule, path: &Path) -> Result<(), SimError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    let header = Header {
        cfg: state.cfg,
        rule: *rule,
        seed: state.seed,
        step: state.step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;

    write_tensor(&mut out, &state.u)?;
    write_tensor(&mut out, &state.v)?;
    for block in &state.w {
        for w in block {
            write_tensor(&mut out, w)?;
        }
    }
    write_opt(&mut out, &state.opt_u)?;
    write_opt(&mut out, &state.opt_v)?;
    for block in &state.opt_w {
        for o in block {
            write_opt(&mut out, o)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(NetState, UpdateRule), SimError> {
    let mut input = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SimError::Checkpoint("unrecognized magic/version".into()));
    }
    let json_len = read_u32(&mut input)? as usize;
    let mut json = vec![0u8; json_len];
    input.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| SimError::Checkpoint(format!("bad header: {e}")))?;
    header.cfg.validate()?;
    let cfg = header.cfg;
    let n = cfg.n;

    let u = read_tensor(&mut input, n, cfg.d_in)?;
    let v = read_tensor(&mut input, n, cfg.d_out)?;
    let mut w = Vec::with_capacity(cfg.l);
    for _ in 0..cfg.l {
        let mut block = Vec::with_capacity(cfg.k);
        for _ in 0..cfg.k {
            block.push(read_tensor(&mut input, n, n)?);
        }
        w.push(block);
    }
    let opt_u = read_opt(&mut input, n * cfg.d_in)?;
    let opt_v = read_opt(&mut input, n * cfg.d_out)?;
    let mut opt_w = Vec::with_capacity(cfg.l);
    for _ in 0..cfg.l {
        let mut block = Vec::with_capacity(cfg.k);
        for _ in 0..cfg.k {
            block.push(read_opt(&mut input, n * n)?);
        }
        opt_w.push(block);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(SimError::Checkpoint("trailing bytes after payload".into()));
    }

    let state = NetState {
        cfg,
        u,
        v,
        w,
        opt_u,
        opt_v,
        opt_w,
        seed: header.seed,
        step: header.step,
    };
    Ok((state, header.rule))
}

fn write_tensor<W: Write>(out: &mut W, a: &Array2<f64>) -> Result<(), SimError> {
    let slice = a.as_slice().expect("standard layout");
    write_f64s(out, slice)
}

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> Result<(), SimError> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_tensor<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>, SimError> {
    let data = read_f64s(input, rows * cols)?;
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| SimError::Checkpoint(format!("tensor shape: {e}")))
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>, SimError> {
    let mut buf = vec![0u8; count * 8];
    input
        .read_exact(&mut buf)
        .map_err(|_| SimError::Checkpoint("truncated tensor payload".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk size 8")))
        .collect())
}

fn write_opt<W: Write>(out: &mut W, state: &OptimizerState) -> Result<(), SimError> {
    let (step, m, v, saw_nan) = state.raw_parts();
    out.write_all(&step.to_le_bytes())?;
    out.write_all(&(m.len() as u64).to_le_bytes())?;
    write_f64s(out, m)?;
    write_f64s(out, v)?;
    out.write_all(&[saw_nan as u8])?;
    Ok(())
}

fn read_opt<R: Read>(input: &mut R, len: usize) -> Result<OptimizerState, SimError> {
    let step = read_u64(input)?;
    let moment_len = read_u64(input)? as usize;
    if moment_len != 0 && moment_len != len {
        return Err(SimError::Checkpoint("moment length mismatch".into()));
    }
    let m = read_f64s(input, moment_len)?;
    let v = read_f64s(input, moment_len)?;
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    OptimizerState::from_raw_parts(len, step, m, v, flag[0] != 0)
        .map_err(|e| SimError::Checkpoint(e.to_string()))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, SimError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, SimError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
