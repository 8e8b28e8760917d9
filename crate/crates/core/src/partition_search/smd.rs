//! Search-space mutual distillation loss.
//!
//! `L = CE(student, y) + λ_prev·KL(p_s ‖ p_prev) + λ_peer/(D−1)·Σ_i KL(p_s ‖ p_i)`
//! where `D − 1` is the number of peers. A term with zero weight, or with no
//! teacher, is left out of the graph entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmdWeights {
    pub lambda_prev: f64,
    pub lambda_peer: f64,
}

impl Default for SmdWeights {
    fn default() -> Self {
        SmdWeights {
            lambda_prev: 1.0,
            lambda_peer: 1.0,
        }
    }
}

impl SmdWeights {
    pub const OFF: SmdWeights = SmdWeights {
        lambda_prev: 0.0,
        lambda_peer: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("smd.lambda_prev", self.lambda_prev), ("smd.lambda_peer", self.lambda_peer)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Teacher log-probabilities aligned row-for-row with the student batch.
#[derive(Clone, Debug, Default)]
pub struct TeacherLogProbs {
    /// Previous stage's optimal supernet.
    pub prev: Option<Tensor>,
    /// Siblings from the current split.
    pub peers: Vec<Tensor>,
}

impl TeacherLogProbs {
    /// Takes teacher probabilities; zero entries become `-inf` and are
    /// rejected when the loss is built.
    pub fn from_probs(prev: Option<&Tensor>, peers: &[Tensor]) -> Self {
        let ln = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.ln()).collect()).unwrap();
        TeacherLogProbs {
            prev: prev.map(ln),
            peers: peers.iter().map(ln).collect(),
        }
    }
}

/// Records the loss on `tape`; returns `(total, classification)` nodes.
pub fn smd_loss_node(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    teachers: &TeacherLogProbs,
    weights: SmdWeights,
) -> Result<(NodeId, NodeId)> {
    let ce = tape.cross_entropy(logits, labels)?;
    let use_prev = weights.lambda_prev != 0.0 && teachers.prev.is_some();
    let use_peers = weights.lambda_peer != 0.0 && !teachers.peers.is_empty();
    if !use_prev && !use_peers {
        return Ok((ce, ce));
    }
    let shape = tape.value(logits).shape().to_vec();
    let teacher_node = |tape: &mut Tape, t: &Tensor| -> Result<NodeId> {
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "smd_loss",
                left: shape.clone(),
                right: t.shape().to_vec(),
            });
        }
        Ok(tape.constant(t.clone()))
    };
    let mut total = ce;
    if use_prev {
        let q = teacher_node(tape, teachers.prev.as_ref().unwrap())?;
        let kl = tape.kl_div_logits(logits, q)?;
        let term = tape.scale(kl, weights.lambda_prev);
        total = tape.add(total, term)?;
    }
    if use_peers {
        let mut acc: Option<NodeId> = None;
        for t in &teachers.peers {
            let q = teacher_node(tape, t)?;
            let kl = tape.kl_div_logits(logits, q)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, kl)?,
                None => kl,
            });
        }
        let term = tape.scale(acc.unwrap(), weights.lambda_peer / teachers.peers.len() as f64);
        total = tape.add(total, term)?;
    }
    Ok((total, ce))
}

/// Value of the distillation loss for fixed student logits.
pub fn smd_loss(student_logits: &Tensor, labels: &[usize], teachers: &TeacherLogProbs, weights: SmdWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = tape.constant(student_logits.clone());
    let (total, _) = smd_loss_node(&mut tape, logits, labels, teachers, weights)?;
    Ok(tape.value(total).data()[0])
}
