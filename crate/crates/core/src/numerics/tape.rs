//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive in execution order, so the node list is
//! already a topological order and the backward pass is a single reverse
//! sweep. Only nodes that depend on a parameter leaf take part in it.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Param,
    Constant,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    AvgPair(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    KlDiv { p: NodeId, q: NodeId },
    KlLogits { logits: NodeId, probs: Vec<f64>, gaps: Vec<f64>, row_kl: Vec<f64> },
    Scale { x: NodeId, c: f64 },
    Add(NodeId, NodeId),
    Sum(NodeId),
    Mix { xs: Vec<NodeId>, w: NodeId, slots: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn check_prob_rows(op: &'static str, t: &Tensor) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("{op}: row {r} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("{op}: row {r} sums to {s}, not 1")));
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Param, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// `x · w + b` with `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(shape_err("affine", xv, wv));
        }
        let (batch, inp, out) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [out] {
            return Err(shape_err("affine", wv, bv));
        }
        let mut data = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            data.extend_from_slice(bv.data());
        }
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..batch {
            let orow = &mut data[r * out..(r + 1) * out];
            for k in 0..inp {
                let a = xd[r * inp + k];
                if a == 0.0 {
                    continue;
                }
                for (o, wk) in orow.iter_mut().zip(&wd[k * out..(k + 1) * out]) {
                    *o += a * wk;
                }
            }
        }
        let value = Tensor::new(vec![batch, out], data)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Replaces each disjoint adjacent feature pair `(2j, 2j+1)` by its mean
    /// in both positions. An odd trailing feature passes through unchanged.
    pub fn avg_pair(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        let c = value.cols();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for pair in row.chunks_exact_mut(2) {
                    let m = 0.5 * (pair[0] + pair[1]);
                    pair[0] = m;
                    pair[1] = m;
                }
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::AvgPair(x), rg)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let value = log_softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::LogSoftmax(x), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if lv.shape().len() != 2 || rows != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let logp = log_softmax_rows(lv);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(r, &l)| logp.row(r)[l])
            .sum::<f64>()
            / rows as f64;
        let probs = logp.into_data().into_iter().map(f64::exp).collect();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Batch mean of `Σ_c p_c ln(p_c / q_c)` over probability rows.
    pub fn kl_div(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (pv, qv) = (self.value(p), self.value(q));
        if !pv.same_shape(qv) || pv.shape().is_empty() {
            return Err(shape_err("kl_div", pv, qv));
        }
        check_prob_rows("kl_div", pv)?;
        check_prob_rows("kl_div", qv)?;
        let mut total = 0.0;
        for (&a, &b) in pv.data().iter().zip(qv.data()) {
            if a > 0.0 {
                if b <= 0.0 {
                    return Err(Error::invalid("kl_div: q has zero mass where p does not"));
                }
                total += a * (a / b).ln();
            }
        }
        let value = Tensor::scalar(total / pv.rows() as f64);
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(value, Op::KlDiv { p, q }, rg))
    }

    /// Batch-mean `KL(softmax(logits) ‖ exp(target))` where `target` holds
    /// row-wise log-probabilities. Works in log space, so it stays finite for
    /// arbitrarily confident distributions. `target` is treated as a
    /// constant.
    pub fn kl_div_logits(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let (lv, tv) = (self.value(logits), self.value(target));
        if !lv.same_shape(tv) || lv.shape().is_empty() {
            return Err(shape_err("kl_div_logits", lv, tv));
        }
        let c = lv.cols();
        for (r, row) in tv.data().chunks(c.max(1)).enumerate() {
            let lse = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - lse).exp()).sum::<f64>().ln() + lse;
            if row.iter().any(|v| !v.is_finite()) || total.abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "kl_div_logits: target row {r} is not a finite log-distribution"
                )));
            }
        }
        let logp = log_softmax_rows(lv);
        let probs: Vec<f64> = logp.data().iter().map(|v| v.exp()).collect();
        let gaps: Vec<f64> = logp.data().iter().zip(tv.data()).map(|(a, b)| a - b).collect();
        let row_kl: Vec<f64> = probs
            .chunks(c)
            .zip(gaps.chunks(c))
            .map(|(p, d)| p.iter().zip(d).map(|(p, d)| p * d).sum())
            .collect();
        let value = Tensor::scalar(row_kl.iter().sum::<f64>() / lv.rows() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::KlLogits {
                logits,
                probs,
                gaps,
                row_kl,
            },
            rg,
        ))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, c }, rg)
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xv, yv) = (self.value(x), self.value(y));
        if !xv.same_shape(yv) {
            return Err(shape_err("add", xv, yv));
        }
        let mut value = xv.clone();
        value.add_assign(yv);
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::Add(x, y), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// `Σ_j weights[slots[j]] · xs[j]`, where `weights` is read as a flat
    /// vector. Slots that have no term contribute nothing.
    pub fn mix(&mut self, xs: &[NodeId], weights: NodeId, slots: &[usize]) -> Result<NodeId> {
        if xs.is_empty() || xs.len() != slots.len() {
            return Err(Error::invalid("mix: need one slot per input and at least one input"));
        }
        let wv = self.value(weights);
        if let Some(&s) = slots.iter().find(|&&s| s >= wv.len()) {
            return Err(Error::invalid(format!(
                "mix: slot {s} out of range for {} weights",
                wv.len()
            )));
        }
        let first = self.value(xs[0]);
        let mut value = Tensor::zeros(first.shape());
        for (&x, &s) in xs.iter().zip(slots) {
            let xv = self.value(x);
            if !xv.same_shape(&value) {
                return Err(shape_err("mix", &value, xv));
            }
            let a = self.value(weights).data()[s];
            for (o, v) in value.data_mut().iter_mut().zip(xv.data()) {
                *o += a * v;
            }
        }
        let rg = self.rg(weights) || xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            value,
            Op::Mix {
                xs: xs.to_vec(),
                w: weights,
                slots: slots.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// leaf. Parameters with no path to `loss` get an all-zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Param | Op::Constant) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Param => {
                    if grads[i].is_none() {
                        grads[i] = Some(Tensor::zeros(node.value.shape()));
                    }
                }
                _ => grads[i] = None,
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, inp, outw) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                if self.rg(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    for r in 0..batch {
                        let grow = &gd[r * outw..(r + 1) * outw];
                        for k in 0..inp {
                            let wrow = &wd[k * outw..(k + 1) * outw];
                            dx[r * inp + k] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; inp * outw];
                    for r in 0..batch {
                        let grow = &gd[r * outw..(r + 1) * outw];
                        for k in 0..inp {
                            let a = xd[r * inp + k];
                            if a == 0.0 {
                                continue;
                            }
                            for (d, gv) in dw[k * outw..(k + 1) * outw].iter_mut().zip(grow) {
                                *d += a * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; outw];
                    for grow in gd.chunks(outw) {
                        for (d, gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::vector(db));
                }
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
                    *d *= 1.0 - y * y;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::AvgPair(x) => {
                let mut dx = g.clone();
                let c = dx.cols();
                for row in dx.data_mut().chunks_mut(c) {
                    for pair in row.chunks_exact_mut(2) {
                        let m = 0.5 * (pair[0] + pair[1]);
                        pair[0] = m;
                        pair[1] = m;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let c = out.cols();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let c = out.cols();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let total: f64 = drow.iter().sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d -= y.exp() * total;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.data()[0] / labels.len() as f64;
                let mut dx = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * c + l] -= 1.0;
                }
                for d in &mut dx {
                    *d *= scale;
                }
                self.accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), dx).unwrap());
            }
            Op::KlDiv { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let scale = g.data()[0] / pv.rows() as f64;
                if self.rg(*p) {
                    let mut dp = pv.clone();
                    for (d, &b) in dp.data_mut().iter_mut().zip(qv.data()) {
                        *d = if *d > 0.0 { scale * ((*d / b).ln() + 1.0) } else { 0.0 };
                    }
                    self.accumulate(grads, *p, dp);
                }
                if self.rg(*q) {
                    let mut dq = qv.clone();
                    for (d, &a) in dq.data_mut().iter_mut().zip(pv.data()) {
                        *d = if a > 0.0 { -scale * a / *d } else { 0.0 };
                    }
                    self.accumulate(grads, *q, dq);
                }
            }
            Op::KlLogits {
                logits,
                probs,
                gaps,
                row_kl,
            } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.data()[0] / lv.rows() as f64;
                let dx: Vec<f64> = probs
                    .iter()
                    .zip(gaps)
                    .enumerate()
                    .map(|(i, (p, d))| scale * p * (d - row_kl[i / c]))
                    .collect();
                self.accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), dx).unwrap());
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Add(x, y) => {
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *y, g.clone());
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                self.accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), s));
            }
            Op::Mix { xs, w, slots } => {
                let wv = self.value(*w);
                let mut dw = if self.rg(*w) {
                    Some(Tensor::zeros(wv.shape()))
                } else {
                    None
                };
                for (&x, &s) in xs.iter().zip(slots) {
                    let xv = self.value(x);
                    if let Some(dw) = dw.as_mut() {
                        let dot: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                        dw.data_mut()[s] += dot;
                    }
                    if self.rg(x) {
                        let a = wv.data()[s];
                        self.accumulate(grads, x, g.map(|v| v * a));
                    }
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap());
        let y = t.softmax(x);
        for &v in t.value(y).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn kl_of_identical_rows_is_zero() {
        let mut t = Tape::new();
        let p = Tensor::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.7, 0.2, 0.1]]).unwrap();
        let a = t.constant(p.clone());
        let b = t.constant(p);
        let kl = t.kl_div(a, b).unwrap();
        assert_eq!(t.value(kl).item(), Some(0.0));
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        // -ln(e^2 / (e^2 + 1)) = ln(1 + e^-2)
        let expected = 0.126_928_011_042_972_38;
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap());
        let l = t.cross_entropy(x, &[0]).unwrap();
        assert!(close(t.value(l).item().unwrap(), expected, 1e-15));
    }

    #[test]
    fn gradient_of_scaled_sum_is_constant() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap());
        let s = t.scale(x, 3.0);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let dead = t.param(Tensor::vector(vec![5.0, 6.0]));
        let l = t.sum(x);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(dead).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0]));
        let y = t.add(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let l = t.sum(z);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 3]));
        let w = t.constant(Tensor::zeros(&[4, 2]));
        let b = t.constant(Tensor::zeros(&[2]));
        let err = t.affine(x, w, b).unwrap_err().to_string();
        assert!(err.contains("affine") && err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
        let y = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(x, y).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn avg_pair_means_adjacent_features() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 3.0, -2.0, 2.0, 7.0]]).unwrap());
        let y = t.avg_pair(x);
        assert_eq!(t.value(y).data(), &[2.0, 2.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2]));
        assert!(t.cross_entropy(x, &[2]).is_err());
        assert!(t.cross_entropy(x, &[0, 1]).is_err());
    }

    #[test]
    fn kl_rejects_non_probability_rows() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap());
        let q = t.constant(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
        assert!(t.kl_div(p, q).is_err());
    }
}
