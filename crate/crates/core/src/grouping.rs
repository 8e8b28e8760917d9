//! Gradient-matching similarity between the candidate ops of one edge, and
//! the min-cut bipartition that groups them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, seeded};
use crate::searchspace::{OpKind, OpSet};
use crate::supernet::{PathMode, Supernet};

pub const MAX_CUT_OPS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmConfig {
    /// Gradient batches averaged before the cosine is taken.
    pub batch_count: usize,
    pub batch_size: usize,
}

impl Default for GmConfig {
    fn default() -> Self {
        GmConfig {
            batch_count: 4,
            batch_size: 64,
        }
    }
}

impl GmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_count == 0 {
            return Err(Error::config("grouping.batch_count", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("grouping.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Pairwise gradient cosine similarities for the ops of one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GmMatrix {
    pub edge: usize,
    pub ops: Vec<OpKind>,
    pub sims: Vec<Vec<f64>>,
    pub batch_count: usize,
}

/// Bipartition of an edge's ops. `group_a` always holds the first op in
/// palette order.
#[derive(Clone, Debug, PartialEq)]
pub struct OpSplit {
    pub edge: usize,
    pub group_a: OpSet,
    pub group_b: OpSet,
    pub cut: f64,
}

/// Cosine similarity with the zero-vector convention: two zero vectors are
/// identical (1), a zero vector is orthogonal to anything else (0).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

/// Averaged classification-loss gradient with `op` alone on `edge`, taken
/// over every shared weight except those owned by `edge` itself. The vector
/// follows the supernet's parameter-key order.
pub fn op_gradient(supernet: &Supernet, edge: usize, op: OpKind, batches: &[(Tensor, Vec<usize>)]) -> Result<Vec<f64>> {
    if !supernet.region().allowed(edge).contains(op) {
        return Err(Error::invalid(format!("op {op} is not allowed on edge {edge}")));
    }
    if batches.is_empty() {
        return Err(Error::invalid("op_gradient needs at least one batch"));
    }
    let keep: Vec<bool> = supernet.param_keys().iter().map(|k| k.edge() != Some(edge)).collect();
    let mut acc: Vec<f64> = Vec::new();
    for (x, y) in batches {
        let (_, grads) = supernet.weight_gradients(x, y, PathMode::Probe { edge, op })?;
        let flat: Vec<f64> = grads
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .flat_map(|(g, _)| g.data().iter().copied())
            .collect();
        if acc.is_empty() {
            acc = flat;
        } else {
            for (a, v) in acc.iter_mut().zip(flat) {
                *a += v;
            }
        }
    }
    let n = batches.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// Draws `cfg.batch_count` batches from `data` with a seeded shuffle.
pub fn sample_batches(data: &Dataset, cfg: &GmConfig, seed: u64) -> Vec<(Tensor, Vec<usize>)> {
    let mut rng = seeded(derive_seed(seed, 0x6d));
    let mut out = Vec::with_capacity(cfg.batch_count);
    while out.len() < cfg.batch_count {
        for b in data.batch_indices(cfg.batch_size, &mut rng) {
            if out.len() == cfg.batch_count {
                break;
            }
            let y = b.iter().map(|&i| data.labels()[i]).collect();
            out.push((data.inputs().select_rows(&b), y));
        }
    }
    out
}

impl GmMatrix {
    pub fn from_gradients(edge: usize, ops: Vec<OpKind>, grads: &[Vec<f64>], batch_count: usize) -> GmMatrix {
        let n = grads.len();
        let mut sims = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let s = cosine(&grads[i], &grads[j]);
                sims[i][j] = s;
                sims[j][i] = s;
            }
        }
        GmMatrix {
            edge,
            ops,
            sims,
            batch_count,
        }
    }

    pub fn write_csv<W: Write>(matrices: &[GmMatrix], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["edge", "op_i", "op_j", "similarity"])?;
        for m in matrices {
            for (i, oi) in m.ops.iter().enumerate() {
                for (j, oj) in m.ops.iter().enumerate() {
                    w.write_record([m.edge.to_string(), oi.to_string(), oj.to_string(), m.sims[i][j].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Gradient-matching matrix for `edge` from `batch_count` batches of `data`.
pub fn gm_matrix(supernet: &Supernet, edge: usize, data: &Dataset, cfg: &GmConfig, seed: u64) -> Result<GmMatrix> {
    let ops = supernet.region().allowed(edge).ops();
    if ops.len() < 2 {
        return Err(Error::invalid(format!(
            "edge {edge} allows a single op; there is nothing to split"
        )));
    }
    let batches = sample_batches(data, cfg, seed);
    let grads = ops
        .iter()
        .map(|&op| op_gradient(supernet, edge, op, &batches))
        .collect::<Result<Vec<_>>>()?;
    Ok(GmMatrix::from_gradients(edge, ops, &grads, cfg.batch_count))
}

/// Sum of `sims[i][j]` over `i` in `mask`, `j` outside it.
pub fn cut_value(sims: &[Vec<f64>], mask: u32) -> f64 {
    let n = sims.len();
    let mut cut = 0.0;
    for i in 0..n {
        if mask >> i & 1 == 0 {
            continue;
        }
        for j in 0..n {
            if mask >> j & 1 == 0 {
                cut += sims[i][j];
            }
        }
    }
    cut
}

/// Exhaustive minimum cut over all `2^(n−1) − 1` bipartitions. Group A
/// always contains item 0; ties keep the numerically smallest mask.
pub fn min_cut_mask(sims: &[Vec<f64>]) -> Result<(u32, f64)> {
    let n = sims.len();
    if !(2..=MAX_CUT_OPS).contains(&n) {
        return Err(Error::invalid(format!("min cut needs 2..={MAX_CUT_OPS} ops, got {n}")));
    }
    if sims.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("similarity matrix is not square"));
    }
    let full = (1u32 << n) - 1;
    let mut best: Option<(u32, f64)> = None;
    for mask in (1..full).step_by(2) {
        let cut = cut_value(sims, mask);
        if best.is_none_or(|(_, b)| cut < b) {
            best = Some((mask, cut));
        }
    }
    Ok(best.unwrap())
}

pub fn min_cut_split(matrix: &GmMatrix) -> Result<OpSplit> {
    if matrix.ops.len() != matrix.sims.len() {
        return Err(Error::invalid("op list and similarity matrix disagree in size"));
    }
    let (mask, cut) = min_cut_mask(&matrix.sims)?;
    let mut group_a = OpSet::empty();
    let mut group_b = OpSet::empty();
    for (i, &op) in matrix.ops.iter().enumerate() {
        if mask >> i & 1 == 1 {
            group_a.insert(op);
        } else {
            group_b.insert(op);
        }
    }
    Ok(OpSplit {
        edge: matrix.edge,
        group_a,
        group_b,
        cut,
    })
}
