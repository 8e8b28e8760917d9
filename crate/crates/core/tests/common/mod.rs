#![allow(dead_code, clippy::needless_range_loop)]

use hepnas::dataset::Dataset;
use hepnas::grouping::op_gradient;
use hepnas::numerics::{adam_step, AdamState, Tape, Tensor};
use hepnas::rng::seeded;
use hepnas::searchspace::{Architecture, CellSpec, OpKind, Region};
use hepnas::supernet::{PathMode, Supernet};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Central differences agree with the analytic value to 1e-4 relative, or
/// 1e-7 absolute for gradients near zero.
pub fn fd_agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-4 * analytic.abs().max(numeric.abs()) || diff <= 1e-7
}

#[derive(Debug)]
pub struct Probe {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn ok(&self) -> bool {
        fd_agrees(self.analytic, self.numeric)
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_labels(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Fixed inputs for one small tape graph: two affine layers around a
/// softmax-weighted mixture of relu/tanh/avg_pair branches, scored by cross
/// entropy plus both KL forms.
pub struct GraphCase {
    x: Tensor,
    labels: Vec<usize>,
    target_logp: Tensor,
    target_p: Tensor,
    pub params: Vec<Tensor>,
}

impl GraphCase {
    pub fn random(seed: u64) -> GraphCase {
        let mut rng = seeded(seed);
        let (rows, d, h, c) = (rng.random_range(2..6), rng.random_range(1..4), rng.random_range(2..6), rng.random_range(2..4));
        let x = random_tensor(&mut rng, &[rows, d], 2.0);
        let labels = random_labels(&mut rng, rows, c);
        let raw = random_tensor(&mut rng, &[rows, c], 2.0);
        let mut logp = raw.clone();
        let mut p = raw.clone();
        for r in 0..rows {
            let row = raw.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                logp.data_mut()[r * c + j] = row[j] - lse;
                p.data_mut()[r * c + j] = (row[j] - lse).exp();
            }
        }
        let params = vec![
            random_tensor(&mut rng, &[d, h], 1.0),
            random_tensor(&mut rng, &[h], 0.5),
            random_tensor(&mut rng, &[1, 3], 1.0),
            random_tensor(&mut rng, &[h, c], 1.0),
            random_tensor(&mut rng, &[c], 0.5),
        ];
        GraphCase {
            x,
            labels,
            target_logp: logp,
            target_p: p,
            params,
        }
    }

    pub fn loss_and_grads(&self, params: &[Tensor]) -> (f64, Vec<Tensor>) {
        let mut t = Tape::new();
        let ids: Vec<_> = params.iter().map(|p| t.param(p.clone())).collect();
        let x = t.constant(self.x.clone());
        let hidden = t.affine(x, ids[0], ids[1]).unwrap();
        let a = t.relu(hidden);
        let b = t.tanh(hidden);
        let c = t.avg_pair(hidden);
        let w = t.softmax(ids[2]);
        let mixed = t.mix(&[a, b, c], w, &[0, 1, 2]).unwrap();
        let logits = t.affine(mixed, ids[3], ids[4]).unwrap();
        let ce = t.cross_entropy(logits, &self.labels).unwrap();
        let target = t.constant(self.target_logp.clone());
        let kl_logits = t.kl_div_logits(logits, target).unwrap();
        let probs = t.softmax(logits);
        let q = t.constant(self.target_p.clone());
        let kl = t.kl_div(probs, q).unwrap();
        let kl_logits = t.scale(kl_logits, 0.7);
        let kl = t.scale(kl, 0.3);
        let partial = t.add(ce, kl_logits).unwrap();
        let loss = t.add(partial, kl).unwrap();
        let grads = t.backward(loss).unwrap();
        let g = ids.iter().map(|&id| grads.get(id).unwrap().clone()).collect();
        (t.value(loss).data()[0], g)
    }
}

fn central<F: Fn(&[Tensor]) -> f64>(params: &[Tensor], which: usize, index: usize, eps: f64, f: F) -> f64 {
    let mut plus = params.to_vec();
    plus[which].data_mut()[index] += eps;
    let mut minus = params.to_vec();
    minus[which].data_mut()[index] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

pub fn graph_probes(seed: u64, count: usize) -> Vec<Probe> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let case = GraphCase::random(rng.random());
        let (_, grads) = case.loss_and_grads(&case.params);
        let which = rng.random_range(0..case.params.len());
        let index = rng.random_range(0..case.params[which].len());
        let numeric = central(&case.params, which, index, 1e-6, |p| case.loss_and_grads(p).0);
        out.push(Probe {
            label: format!("graph param {which}[{index}]"),
            analytic: grads[which].data()[index],
            numeric,
        });
    }
    out
}

fn random_supernet(rng: &mut impl Rng) -> (Supernet, Tensor, Vec<usize>) {
    let nodes = rng.random_range(2..5);
    let spec = CellSpec::new(nodes, rng.random_range(2..5), 2, 3, OpKind::ALL.to_vec()).unwrap();
    let mut net = Supernet::new(spec.clone(), Region::full(&spec), rng.random()).unwrap();
    for e in 0..spec.edge_count() {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_alpha(e, &a).unwrap();
    }
    let x = random_tensor(rng, &[6, 2], 2.0);
    let y = random_labels(rng, 6, 3);
    (net, x, y)
}

fn perturbed_loss(net: &Supernet, which: usize, index: usize, delta: f64, f: impl Fn(&Supernet) -> f64) -> f64 {
    let mut n = net.clone();
    let key = n.param_keys()[which];
    n.weight_mut(key).unwrap().data_mut()[index] += delta;
    f(&n)
}

/// Weight-gradient probes through the supernet forward in mixture, probe and
/// single-path modes.
pub fn supernet_probes(seed: u64, count: usize) -> Vec<Probe> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let (net, x, y) = random_supernet(&mut rng);
        let spec = net.spec().clone();
        let arch = Architecture::new((0..spec.edge_count()).map(|_| *OpKind::ALL.choose(&mut rng).unwrap()).collect());
        let edge = rng.random_range(0..spec.edge_count());
        let op = *OpKind::ALL.choose(&mut rng).unwrap();
        let kind = out.len() % 3;
        let mode = match kind {
            0 => PathMode::Mixture,
            1 => PathMode::Probe { edge, op },
            _ => PathMode::Single(&arch),
        };
        let (_, grads) = net.weight_gradients(&x, &y, mode).unwrap();
        let which = rng.random_range(0..grads.len());
        let index = rng.random_range(0..grads[which].len());
        let eps = 1e-6;
        let loss = |n: &Supernet| n.weight_gradients(&x, &y, mode).unwrap().0;
        let numeric =
            (perturbed_loss(&net, which, index, eps, loss) - perturbed_loss(&net, which, index, -eps, loss)) / (2.0 * eps);
        out.push(Probe {
            label: format!("supernet {:?} {:?}[{index}] mode {kind}", spec.nodes(), net.param_keys()[which]),
            analytic: grads[which].data()[index],
            numeric,
        });
    }
    out
}

/// Probes of the averaged, edge-excluded gradient used for op grouping.
pub fn op_gradient_probes(seed: u64, count: usize) -> Vec<Probe> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let (net, _, _) = random_supernet(&mut rng);
        let batches: Vec<(Tensor, Vec<usize>)> = (0..3)
            .map(|_| (random_tensor(&mut rng, &[5, 2], 2.0), random_labels(&mut rng, 5, 3)))
            .collect();
        let edge = rng.random_range(0..net.spec().edge_count());
        let op = *OpKind::ALL.choose(&mut rng).unwrap();
        let g = op_gradient(&net, edge, op, &batches).unwrap();
        // Map a flat coordinate back to (key, offset) over keys not owned by `edge`.
        let flat = rng.random_range(0..g.len());
        let mut offset = flat;
        let mut which = 0;
        for (i, k) in net.param_keys().iter().enumerate() {
            if k.edge() == Some(edge) {
                continue;
            }
            let len = net.weight(*k).unwrap().len();
            if offset < len {
                which = i;
                break;
            }
            offset -= len;
        }
        let mode = PathMode::Probe { edge, op };
        let mean_loss = |n: &Supernet| {
            batches.iter().map(|(x, y)| n.weight_gradients(x, y, mode).unwrap().0).sum::<f64>() / batches.len() as f64
        };
        let eps = 1e-6;
        let numeric = (perturbed_loss(&net, which, offset, eps, mean_loss)
            - perturbed_loss(&net, which, offset, -eps, mean_loss))
            / (2.0 * eps);
        out.push(Probe {
            label: format!("op_gradient edge {edge} op {op} coord {flat}"),
            analytic: g[flat],
            numeric,
        });
    }
    out
}

/// Minimum cut by enumerating group labelings recursively. Returns the
/// members of the side holding item 0 and the cut value. Among equal cuts the
/// side whose membership read as a binary number is smallest wins.
pub fn brute_min_cut(sims: &[Vec<f64>]) -> (Vec<usize>, f64) {
    fn walk(i: usize, labels: &mut Vec<bool>, sims: &[Vec<f64>], best: &mut Option<(Vec<bool>, f64)>) {
        let n = sims.len();
        if i == n {
            if labels.iter().all(|&l| l) {
                return;
            }
            let mut cut = 0.0;
            for a in 0..n {
                for b in 0..n {
                    if labels[a] && !labels[b] {
                        cut += sims[a][b];
                    }
                }
            }
            let key = |l: &[bool]| l.iter().rev().fold(0u64, |acc, &v| acc * 2 + v as u64);
            let better = match best {
                None => true,
                Some((bl, bc)) => cut < *bc || (cut == *bc && key(labels) < key(bl)),
            };
            if better {
                *best = Some((labels.clone(), cut));
            }
            return;
        }
        for side in [true, false] {
            if i == 0 && !side {
                continue;
            }
            labels.push(side);
            walk(i + 1, labels, sims, best);
            labels.pop();
        }
    }
    let mut best = None;
    walk(0, &mut Vec::new(), sims, &mut best);
    let (labels, cut) = best.unwrap();
    ((0..sims.len()).filter(|&i| labels[i]).collect(), cut)
}

pub fn random_similarity(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = rng.random_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Full-batch Adam training of a tanh MLP written directly against the tape.
/// An empty `hidden` list gives a linear classifier. Returns training accuracy.
pub fn train_mlp(data: &Dataset, hidden: &[usize], epochs: usize, lr: f64, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut dims = vec![data.dim()];
    dims.extend_from_slice(hidden);
    dims.push(data.classes());
    let mut params = Vec::new();
    for w in dims.windows(2) {
        let scale = (6.0 / (w[0] + w[1]) as f64).sqrt();
        params.push(random_tensor(&mut rng, &[w[0], w[1]], scale));
        params.push(Tensor::zeros(&[w[1]]));
    }
    let forward = |t: &mut Tape, params: &[Tensor]| {
        let ids: Vec<_> = params.iter().map(|p| t.param(p.clone())).collect();
        let mut h = t.constant(data.inputs().clone());
        let layers = ids.len() / 2;
        for l in 0..layers {
            h = t.affine(h, ids[2 * l], ids[2 * l + 1]).unwrap();
            if l + 1 < layers {
                h = t.tanh(h);
            }
        }
        (ids, h)
    };
    let mut adam = AdamState::new(lr, (0.9, 0.999), 0.0);
    for _ in 0..epochs {
        let mut t = Tape::new();
        let (ids, logits) = forward(&mut t, &params);
        let loss = t.cross_entropy(logits, data.labels()).unwrap();
        let grads = t.backward(loss).unwrap();
        let g: Vec<Tensor> = ids.iter().map(|&id| grads.get(id).unwrap().clone()).collect();
        adam_step(&mut params, &g, &mut adam).unwrap();
    }
    let mut t = Tape::new();
    let (_, logits) = forward(&mut t, &params);
    let out = t.value(logits);
    let hits = (0..data.len())
        .filter(|&r| {
            let row = out.row(r);
            let pred = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            pred == data.labels()[r]
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Checks every stage of a search: children enumerate to a disjoint cover of
/// the parent, and the final region size equals the start size divided by
/// the product of parent/child size ratios along the selected lineage.
pub fn check_partition_algebra(
    spec: &CellSpec,
    stages: &[hepnas::partition_search::StageLog],
    final_region: &Region,
) -> Result<(), String> {
    use std::collections::HashSet;
    let start = Region::full(spec).size() as f64;
    let mut predicted = start;
    for s in stages {
        let parent = Region::decode(&s.parent_region, spec).map_err(|e| e.to_string())?;
        let parent_set: HashSet<String> = hepnas::searchspace::enumerate_archs(&parent, u64::MAX)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|a| a.encode())
            .collect();
        let mut seen = HashSet::new();
        for c in &s.children {
            let child = Region::decode(&c.region, spec).map_err(|e| e.to_string())?;
            if !child.is_subset(&parent) {
                return Err(format!("stage {}: child {} escapes parent", s.stage, c.region));
            }
            for a in hepnas::searchspace::enumerate_archs(&child, u64::MAX).map_err(|e| e.to_string())? {
                if !seen.insert(a.encode()) {
                    return Err(format!("stage {}: {} appears in two children", s.stage, a.encode()));
                }
            }
        }
        if seen != parent_set {
            return Err(format!("stage {}: children cover {} of {} parent archs", s.stage, seen.len(), parent_set.len()));
        }
        let chosen = &s.children[s.selected];
        predicted /= s.parent_region_size as f64 / chosen.region_size as f64;
    }
    if predicted != final_region.size() as f64 {
        return Err(format!("final region {} but ratios predict {predicted}", final_region.size()));
    }
    Ok(())
}
