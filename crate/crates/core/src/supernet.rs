//! Weight-sharing supernet over a [`Region`].
//!
//! The cell is `stem → intermediate nodes → head`. Node `k` sums, over its
//! incoming edges `(i, k)`, the softmax(α)-weighted outputs of every allowed
//! operation applied to node `i`. A Zero op adds nothing but still takes a
//! share of the softmax mass.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, cosine_lr, sgd_step, AdamState, NodeId, SgdState, Tape, Tensor};
use crate::partition_search::smd::{smd_loss_node, SmdWeights, TeacherLogProbs};
use crate::rng::{derive_seed, seeded};
use crate::searchspace::{Architecture, CellSpec, OpKind, Region};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Identifies one shared weight tensor.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKey {
    StemW,
    StemB,
    HeadW,
    HeadB,
    OpW { edge: usize, op: OpKind },
    OpB { edge: usize, op: OpKind },
}

impl ParamKey {
    pub fn edge(self) -> Option<usize> {
        match self {
            ParamKey::OpW { edge, .. } | ParamKey::OpB { edge, .. } => Some(edge),
            _ => None,
        }
    }

    fn stream(self) -> u64 {
        match self {
            ParamKey::StemW => 0,
            ParamKey::StemB => 1,
            ParamKey::HeadW => 2,
            ParamKey::HeadB => 3,
            ParamKey::OpW { edge, op } => 4 + 2 * (edge as u64 * 8 + op as u64),
            ParamKey::OpB { edge, op } => 5 + 2 * (edge as u64 * 8 + op as u64),
        }
    }

    fn shape(self, spec: &CellSpec) -> Vec<usize> {
        let (d, w, c) = (spec.input_dim(), spec.width(), spec.classes());
        match self {
            ParamKey::StemW => vec![d, w],
            ParamKey::StemB => vec![w],
            ParamKey::HeadW => vec![w, c],
            ParamKey::HeadB => vec![c],
            ParamKey::OpW { .. } => vec![w, w],
            ParamKey::OpB { .. } => vec![w],
        }
    }

    fn fan_in(self, spec: &CellSpec) -> usize {
        match self {
            ParamKey::StemW | ParamKey::StemB => spec.input_dim(),
            _ => spec.width(),
        }
    }
}

/// Sorted parameter keys for a region.
fn param_keys(spec: &CellSpec, region: &Region) -> Vec<ParamKey> {
    let mut keys = vec![ParamKey::StemW, ParamKey::StemB, ParamKey::HeadW, ParamKey::HeadB];
    for edge in 0..spec.edge_count() {
        for op in region.allowed(edge).iter().filter(|op| op.is_parametric()) {
            keys.push(ParamKey::OpW { edge, op });
            keys.push(ParamKey::OpB { edge, op });
        }
    }
    keys.sort();
    keys
}

/// How each edge picks its operation(s) during a forward pass.
#[derive(Copy, Clone, Debug)]
pub enum PathMode<'a> {
    /// softmax(α) mixture over every allowed op.
    Mixture,
    /// Mixture everywhere except `edge`, which runs `op` alone with weight 1.
    Probe { edge: usize, op: OpKind },
    /// One op per edge, no mixing.
    Single(&'a Architecture),
}

/// Which forward defines validation accuracy of a sub-supernet.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Mixture,
    Discretized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_w: f64,
    /// Floor of the cosine schedule for `lr_w`.
    pub lr_w_min: f64,
    pub momentum: f64,
    pub weight_decay_w: f64,
    pub clip_norm: f64,
    pub lr_alpha: f64,
    pub betas_alpha: (f64, f64),
    pub weight_decay_alpha: f64,
    pub batch_size: usize,
    /// Architecture parameters stay fixed while the global epoch is below this.
    pub alpha_freeze_epochs: usize,
    /// Only first-order architecture updates are implemented.
    pub first_order: bool,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_w: 0.025,
            lr_w_min: 0.001,
            momentum: 0.9,
            weight_decay_w: 3e-4,
            clip_norm: 5.0,
            lr_alpha: 3e-4,
            betas_alpha: (0.5, 0.999),
            weight_decay_alpha: 1e-3,
            batch_size: 64,
            alpha_freeze_epochs: 5,
            first_order: true,
            eval_mode: EvalMode::Mixture,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.lr_w", self.lr_w),
            ("train.clip_norm", self.clip_norm),
            ("train.betas_alpha", self.betas_alpha.0),
            ("train.betas_alpha", self.betas_alpha.1),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("train.lr_w_min", self.lr_w_min),
            ("train.momentum", self.momentum),
            ("train.weight_decay_w", self.weight_decay_w),
            ("train.lr_alpha", self.lr_alpha),
            ("train.weight_decay_alpha", self.weight_decay_alpha),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        if self.betas_alpha.0 >= 1.0 || self.betas_alpha.1 >= 1.0 {
            return Err(Error::config("train.betas_alpha", "betas must be below 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !self.first_order {
            return Err(Error::config("train.first_order", "second-order updates are not supported"));
        }
        Ok(())
    }
}

/// Frozen networks whose predictions regularize a student's weight step.
#[derive(Clone, Default)]
pub struct Teachers<'a> {
    pub prev: Option<&'a Supernet>,
    pub peers: Vec<&'a Supernet>,
    pub weights: SmdWeights,
}

impl<'a> Teachers<'a> {
    pub fn none() -> Self {
        Teachers {
            prev: None,
            peers: Vec::new(),
            weights: SmdWeights::default(),
        }
    }

    fn probs(&self, inputs: &Tensor) -> Result<TeacherLogProbs> {
        let prev = match self.prev {
            Some(t) if self.weights.lambda_prev != 0.0 => Some(t.predict_log_proba(inputs, PathMode::Mixture)?),
            _ => None,
        };
        let peers = if self.weights.lambda_peer != 0.0 {
            self.peers
                .iter()
                .map(|t| t.predict_log_proba(inputs, PathMode::Mixture))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(TeacherLogProbs { prev, peers })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr_w: f64,
    /// Mean classification loss over weight batches.
    pub train_ce: f64,
    /// Mean total (classification + distillation) loss over weight batches.
    pub train_loss: f64,
    pub weight_steps: usize,
    pub alpha_steps: usize,
}

#[derive(Clone, Debug)]
pub struct Supernet {
    spec: CellSpec,
    region: Region,
    keys: Vec<ParamKey>,
    weights: Vec<Tensor>,
    alpha: Vec<Tensor>,
    epoch: usize,
    seed: u64,
    sgd: SgdState,
    adam: AdamState,
}

struct Bound {
    weights: Vec<NodeId>,
    alpha: Vec<NodeId>,
}

impl Supernet {
    /// Fresh supernet with seeded initialization. Weights use
    /// `U(−1/√fan_in, 1/√fan_in)`; α starts at `1e-3·N(0, 1)`.
    pub fn new(spec: CellSpec, region: Region, seed: u64) -> Result<Self> {
        region.validate(&spec)?;
        let keys = param_keys(&spec, &region);
        let weights = keys
            .iter()
            .map(|&k| {
                let shape = k.shape(&spec);
                let bound = 1.0 / (k.fan_in(&spec) as f64).sqrt();
                let mut rng = seeded(derive_seed(seed, k.stream()));
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seeded(derive_seed(seed, u64::MAX));
        let alpha = (0..spec.edge_count())
            .map(|e| {
                let m = region.allowed(e).len();
                let data: Vec<f64> = (0..m)
                    .map(|_| 1e-3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                Tensor::new(vec![1, m], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Supernet {
            spec,
            region,
            keys,
            weights,
            alpha,
            epoch: 0,
            seed,
            sgd: SgdState::new(0.0, 0.0, 0.0, None),
            adam: AdamState::new(0.0, (0.5, 0.999), 0.0),
        })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_keys(&self) -> &[ParamKey] {
        &self.keys
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weight(&self, key: ParamKey) -> Option<&Tensor> {
        self.keys.binary_search(&key).ok().map(|i| &self.weights[i])
    }

    pub fn weight_mut(&mut self, key: ParamKey) -> Option<&mut Tensor> {
        self.keys.binary_search(&key).ok().map(|i| &mut self.weights[i])
    }

    /// Raw architecture parameters of `edge`, one per allowed op in canonical order.
    pub fn alpha(&self, edge: usize) -> &[f64] {
        self.alpha[edge].data()
    }

    pub fn set_alpha(&mut self, edge: usize, values: &[f64]) -> Result<()> {
        let cur = &mut self.alpha[edge];
        if values.len() != cur.len() {
            return Err(Error::Shape {
                op: "set_alpha",
                left: cur.shape().to_vec(),
                right: vec![values.len()],
            });
        }
        cur.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// softmax(α) of `edge`.
    pub fn mixture_weights(&self, edge: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let a = tape.constant(self.alpha[edge].clone());
        let s = tape.softmax(a);
        tape.value(s).data().to_vec()
    }

    pub fn sgd_state(&self) -> &SgdState {
        &self.sgd
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    fn bind(&self, tape: &mut Tape, track_weights: bool, track_alpha: bool) -> Bound {
        let leaf = |tape: &mut Tape, t: &Tensor, track: bool| {
            if track {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Bound {
            weights: self.weights.iter().map(|t| leaf(tape, t, track_weights)).collect(),
            alpha: self.alpha.iter().map(|t| leaf(tape, t, track_alpha)).collect(),
        }
    }

    fn node_of(&self, bound: &Bound, key: ParamKey) -> NodeId {
        bound.weights[self.keys.binary_search(&key).expect("parameter outside region")]
    }

    fn apply_op(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        edge: usize,
        op: OpKind,
        input: Option<NodeId>,
        batch: usize,
    ) -> Result<Option<NodeId>> {
        Ok(match op {
            OpKind::Zero => None,
            OpKind::Skip => input,
            OpKind::AvgPair => input.map(|x| tape.avg_pair(x)),
            OpKind::AffineRelu | OpKind::AffineTanh => {
                let x = match input {
                    Some(x) => x,
                    None => tape.constant(Tensor::zeros(&[batch, self.spec.width()])),
                };
                let w = self.node_of(bound, ParamKey::OpW { edge, op });
                let b = self.node_of(bound, ParamKey::OpB { edge, op });
                let h = tape.affine(x, w, b)?;
                Some(if op == OpKind::AffineRelu { tape.relu(h) } else { tape.tanh(h) })
            }
        })
    }

    fn forward_bound(&self, tape: &mut Tape, bound: &Bound, inputs: NodeId, mode: PathMode) -> Result<NodeId> {
        let xv = tape.value(inputs);
        if xv.shape().len() != 2 || xv.cols() != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "supernet forward",
                left: xv.shape().to_vec(),
                right: vec![xv.rows(), self.spec.input_dim()],
            });
        }
        let batch = xv.rows();
        if let PathMode::Single(arch) = mode {
            if !self.region.contains(arch) {
                return Err(Error::invalid(format!("architecture {arch} lies outside the supernet region")));
            }
        }
        if let PathMode::Probe { edge, op } = mode {
            if edge >= self.spec.edge_count() || !self.region.allowed(edge).contains(op) {
                return Err(Error::invalid(format!("op {op} is not allowed on edge {edge}")));
            }
        }
        let stem = tape.affine(
            inputs,
            self.node_of(bound, ParamKey::StemW),
            self.node_of(bound, ParamKey::StemB),
        )?;
        let mut states: Vec<Option<NodeId>> = vec![Some(stem)];
        for k in 1..self.spec.nodes() {
            let mut acc: Option<NodeId> = None;
            for i in 0..k {
                let edge = self.spec.edge_id(i, k).unwrap();
                let input = states[i];
                let forced = match mode {
                    PathMode::Single(arch) => Some(arch.op(edge)),
                    PathMode::Probe { edge: pe, op } if pe == edge => Some(op),
                    _ => None,
                };
                let allowed = self.region.allowed(edge);
                let out = match forced {
                    Some(op) => self.apply_op(tape, bound, edge, op, input, batch)?,
                    None if allowed.len() == 1 => {
                        self.apply_op(tape, bound, edge, allowed.first().unwrap(), input, batch)?
                    }
                    None => {
                        let mut xs = Vec::new();
                        let mut slots = Vec::new();
                        for (slot, op) in allowed.iter().enumerate() {
                            if let Some(y) = self.apply_op(tape, bound, edge, op, input, batch)? {
                                xs.push(y);
                                slots.push(slot);
                            }
                        }
                        if xs.is_empty() {
                            None
                        } else {
                            let w = tape.softmax(bound.alpha[edge]);
                            Some(tape.mix(&xs, w, &slots)?)
                        }
                    }
                };
                acc = match (acc, out) {
                    (Some(a), Some(b)) => Some(tape.add(a, b)?),
                    (a, b) => a.or(b),
                };
            }
            states.push(acc);
        }
        let last = match states[self.spec.nodes() - 1] {
            Some(x) => x,
            None => tape.constant(Tensor::zeros(&[batch, self.spec.width()])),
        };
        tape.affine(
            last,
            self.node_of(bound, ParamKey::HeadW),
            self.node_of(bound, ParamKey::HeadB),
        )
    }

    /// Logits `[batch, classes]` under `mode`, without recording gradients.
    pub fn forward_mode(&self, inputs: &Tensor, mode: PathMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let x = tape.constant(inputs.clone());
        let out = self.forward_bound(&mut tape, &bound, x, mode)?;
        Ok(tape.value(out).clone())
    }

    /// Mixture-forward logits.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        self.forward_mode(inputs, PathMode::Mixture)
    }

    pub fn predict_proba(&self, inputs: &Tensor, mode: PathMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let x = tape.constant(inputs.clone());
        let out = self.forward_bound(&mut tape, &bound, x, mode)?;
        let p = tape.softmax(out);
        Ok(tape.value(p).clone())
    }

    pub fn predict_log_proba(&self, inputs: &Tensor, mode: PathMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let x = tape.constant(inputs.clone());
        let out = self.forward_bound(&mut tape, &bound, x, mode)?;
        let p = tape.log_softmax(out);
        Ok(tape.value(p).clone())
    }

    /// Classification loss and its gradient with respect to every weight
    /// tensor (aligned with [`Supernet::param_keys`]).
    pub fn weight_gradients(&self, inputs: &Tensor, labels: &[usize], mode: PathMode) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true, false);
        let x = tape.constant(inputs.clone());
        let logits = self.forward_bound(&mut tape, &bound, x, mode)?;
        let loss = tape.cross_entropy(logits, labels)?;
        let mut grads = tape.backward(loss)?;
        let g = bound.weights.iter().map(|&id| grads.take(id).unwrap()).collect();
        Ok((tape.value(loss).data()[0], g))
    }

    /// Loss of one weight step: classification plus distillation terms.
    /// Returns `(total, classification)`.
    pub fn batch_loss(&self, inputs: &Tensor, labels: &[usize], teachers: &Teachers) -> Result<(f64, f64)> {
        let probs = teachers.probs(inputs)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let x = tape.constant(inputs.clone());
        let logits = self.forward_bound(&mut tape, &bound, x, PathMode::Mixture)?;
        let (total, ce) = smd_loss_node(&mut tape, logits, labels, &probs, teachers.weights)?;
        Ok((tape.value(total).data()[0], tape.value(ce).data()[0]))
    }

    fn weight_step(
        &mut self,
        inputs: &Tensor,
        labels: &[usize],
        teachers: &Teachers,
        mode: PathMode,
    ) -> Result<(f64, f64)> {
        let probs = teachers.probs(inputs)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true, false);
        let x = tape.constant(inputs.clone());
        let logits = self.forward_bound(&mut tape, &bound, x, mode)?;
        let (total, ce) = smd_loss_node(&mut tape, logits, labels, &probs, teachers.weights)?;
        let mut grads = tape.backward(total)?;
        let g: Vec<Tensor> = bound.weights.iter().map(|&id| grads.take(id).unwrap()).collect();
        sgd_step(&mut self.weights, &g, &mut self.sgd)?;
        Ok((tape.value(total).data()[0], tape.value(ce).data()[0]))
    }

    fn alpha_step(&mut self, inputs: &Tensor, labels: &[usize]) -> Result<()> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, true);
        let x = tape.constant(inputs.clone());
        let logits = self.forward_bound(&mut tape, &bound, x, PathMode::Mixture)?;
        let loss = tape.cross_entropy(logits, labels)?;
        let mut grads = tape.backward(loss)?;
        let g: Vec<Tensor> = bound.alpha.iter().map(|&id| grads.take(id).unwrap()).collect();
        adam_step(&mut self.alpha, &g, &mut self.adam)
    }

    fn has_choice(&self) -> bool {
        self.region.sets().iter().any(|s| s.len() > 1)
    }

    /// One epoch of alternating first-order bilevel training.
    ///
    /// Each step takes an α step on a `train_alpha` batch (classification
    /// loss only, skipped while α is frozen), then a weight step on a
    /// `train_w` batch under classification plus distillation loss.
    /// `horizon` is the length of the cosine schedule for `lr_w`, counted in
    /// global epochs.
    pub fn train_epoch(
        &mut self,
        data: &Splits,
        cfg: &TrainConfig,
        teachers: &Teachers,
        horizon: usize,
    ) -> Result<EpochStats> {
        self.train_epoch_with(&data.train_w, Some(&data.train_alpha), cfg, teachers, horizon, PathMode::Mixture)
    }

    pub(crate) fn train_epoch_with(
        &mut self,
        train_w: &Dataset,
        train_alpha: Option<&Dataset>,
        cfg: &TrainConfig,
        teachers: &Teachers,
        horizon: usize,
        mode: PathMode,
    ) -> Result<EpochStats> {
        let lr_w = cosine_lr(cfg.lr_w, cfg.lr_w_min, self.epoch, horizon);
        self.sgd.lr = lr_w;
        self.sgd.momentum = cfg.momentum;
        self.sgd.weight_decay = cfg.weight_decay_w;
        self.sgd.clip_norm = Some(cfg.clip_norm);
        self.adam.lr = cfg.lr_alpha;
        self.adam.betas = cfg.betas_alpha;
        self.adam.weight_decay = cfg.weight_decay_alpha;

        let mut rng = seeded(derive_seed(self.seed, 1_000_000 + self.epoch as u64));
        let w_batches = train_w.batch_indices(cfg.batch_size, &mut rng);
        let a_batches = train_alpha
            .map(|d| d.batch_indices(cfg.batch_size, &mut rng))
            .unwrap_or_default();
        let alpha_active = matches!(mode, PathMode::Mixture)
            && !a_batches.is_empty()
            && self.epoch >= cfg.alpha_freeze_epochs
            && cfg.lr_alpha > 0.0
            && self.has_choice();

        let mut stats = EpochStats {
            epoch: self.epoch,
            lr_w,
            ..EpochStats::default()
        };
        for (step, wb) in w_batches.iter().enumerate() {
            if alpha_active {
                let ab = &a_batches[step % a_batches.len()];
                let ad = train_alpha.unwrap();
                let x = ad.inputs().select_rows(ab);
                let y: Vec<usize> = ab.iter().map(|&i| ad.labels()[i]).collect();
                self.alpha_step(&x, &y)?;
                stats.alpha_steps += 1;
            }
            let x = train_w.inputs().select_rows(wb);
            let y: Vec<usize> = wb.iter().map(|&i| train_w.labels()[i]).collect();
            let (total, ce) = self.weight_step(&x, &y, teachers, mode)?;
            stats.train_loss += total;
            stats.train_ce += ce;
            stats.weight_steps += 1;
        }
        if stats.weight_steps > 0 {
            stats.train_loss /= stats.weight_steps as f64;
            stats.train_ce /= stats.weight_steps as f64;
        }
        self.epoch += 1;
        Ok(stats)
    }

    /// Sub-supernet over `sub_region` with weights and α entries copied from
    /// `self`. Optimizer buffers start from zero.
    pub fn inherit(&self, sub_region: &Region) -> Result<Supernet> {
        sub_region.validate(&self.spec)?;
        if !sub_region.is_subset(&self.region) {
            return Err(Error::invalid(format!(
                "region {} is not contained in parent region {}",
                sub_region.encode(),
                self.region.encode()
            )));
        }
        let keys = param_keys(&self.spec, sub_region);
        let weights = keys.iter().map(|&k| self.weight(k).unwrap().clone()).collect();
        let alpha = (0..self.spec.edge_count())
            .map(|e| {
                let parent = self.region.allowed(e);
                let src = self.alpha[e].data();
                let data: Vec<f64> = sub_region
                    .allowed(e)
                    .iter()
                    .map(|op| src[parent.position(op).unwrap()])
                    .collect();
                Tensor::new(vec![1, data.len()], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Supernet {
            spec: self.spec.clone(),
            region: sub_region.clone(),
            keys,
            weights,
            alpha,
            epoch: self.epoch,
            seed: self.seed,
            sgd: SgdState::new(0.0, 0.0, 0.0, None),
            adam: AdamState::new(0.0, (0.5, 0.999), 0.0),
        })
    }

    /// Per-edge argmax of α; ties go to the op earliest in palette order.
    pub fn discretize(&self) -> Architecture {
        let ops = (0..self.spec.edge_count())
            .map(|e| {
                let a = self.alpha[e].data();
                let mut best = 0;
                for (j, &v) in a.iter().enumerate() {
                    if v > a[best] {
                        best = j;
                    }
                }
                self.region.allowed(e).iter().nth(best).unwrap()
            })
            .collect();
        Architecture::new(ops)
    }

    /// Top-1 accuracy under `mode`. Does not touch any parameter.
    pub fn accuracy(&self, data: &Dataset, mode: PathMode) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy of an empty dataset"));
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(512) {
            let x = data.inputs().select_rows(chunk);
            let logits = self.forward_mode(&x, mode)?;
            for (r, &i) in chunk.iter().enumerate() {
                if argmax(logits.row(r)) == data.labels()[i] {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn eval_accuracy(&self, data: &Dataset, mode: EvalMode) -> Result<f64> {
        match mode {
            EvalMode::Mixture => self.accuracy(data, PathMode::Mixture),
            EvalMode::Discretized => {
                let arch = self.discretize();
                self.accuracy(data, PathMode::Single(&arch))
            }
        }
    }

    /// SHA-256 over region, weights, α and epoch; changes whenever any of them do.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.region.encode().as_bytes());
        for t in self.weights.iter().chain(&self.alpha) {
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update((self.epoch as u64).to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            region: self.region.clone(),
            params: self.keys.iter().copied().zip(self.weights.iter().cloned()).collect(),
            alpha: self.alpha.iter().map(|a| a.data().to_vec()).collect(),
            epoch: self.epoch,
            seed: self.seed,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Supernet> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.region.validate(&ck.spec)?;
        let keys = param_keys(&ck.spec, &ck.region);
        if ck.params.len() != keys.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameter tensors, region needs {}",
                ck.params.len(),
                keys.len()
            )));
        }
        let mut weights = Vec::with_capacity(keys.len());
        for (&k, (ck_key, t)) in keys.iter().zip(ck.params) {
            if k != ck_key {
                return Err(Error::invalid(format!("checkpoint parameter {ck_key:?} where {k:?} expected")));
            }
            if t.shape() != k.shape(&ck.spec) || !t.is_finite() {
                return Err(Error::invalid(format!("checkpoint parameter {k:?} has bad shape or values")));
            }
            weights.push(t);
        }
        if ck.alpha.len() != ck.spec.edge_count() {
            return Err(Error::invalid("checkpoint alpha does not cover every edge"));
        }
        let alpha = ck
            .alpha
            .into_iter()
            .enumerate()
            .map(|(e, a)| {
                if a.len() != ck.region.allowed(e).len() || a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("checkpoint alpha for edge {e} is malformed")));
                }
                Tensor::new(vec![1, a.len()], a)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Supernet {
            spec: ck.spec,
            region: ck.region,
            keys,
            weights,
            alpha,
            epoch: ck.epoch,
            seed: ck.seed,
            sgd: SgdState::new(0.0, 0.0, 0.0, None),
            adam: AdamState::new(0.0, (0.5, 0.999), 0.0),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Supernet> {
        Supernet::from_checkpoint(serde_json::from_str(text)?)
    }
}

/// Serialized supernet state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: CellSpec,
    pub region: Region,
    pub params: Vec<(ParamKey, Tensor)>,
    pub alpha: Vec<Vec<f64>>,
    pub epoch: usize,
    pub seed: u64,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
