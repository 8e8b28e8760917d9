//! The staged search driver.
//!
//! The whole supernet is trained, then hierarchies are split one at a time
//! in node order. Each split groups every edge's ops into two halves by
//! gradient matching and creates one child per combination of halves across
//! the hierarchy. Children warm up round-robin under mutual distillation, the
//! child with the best validation accuracy survives, and the rest are
//! dropped. After the last hierarchy the survivor is discretized by α.

pub mod smd;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::grouping::{gm_matrix, min_cut_split, GmConfig, OpSplit};
use crate::rng::{derive_seed, seeded};
use crate::searchspace::{hierarchies, Architecture, CellSpec, Hierarchy, OpSet, Region};
use crate::supernet::{EvalMode, Supernet, Teachers, TrainConfig};
use rand::seq::SliceRandom;

pub use smd::{smd_loss, smd_loss_node, SmdWeights, TeacherLogProbs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSchedule {
    /// Global epoch at which each hierarchy is split; one entry per
    /// intermediate node, strictly ascending.
    pub split_epos: Vec<usize>,
    /// Warmup epochs of the first stage's children.
    pub warm_epo: usize,
    /// Warmup decrease per later stage (floor 1).
    pub warm_decay: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            split_epos: vec![15, 25, 35],
            warm_epo: 5,
            warm_decay: 1,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self, intermediates: usize) -> Result<()> {
        if self.split_epos.len() != intermediates {
            return Err(Error::config(
                "schedule.split_epos",
                format!(
                    "has {} entries but the cell has {intermediates} intermediate nodes",
                    self.split_epos.len()
                ),
            ));
        }
        if self.split_epos.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("schedule.split_epos", "must be strictly ascending"));
        }
        if self.warm_epo == 0 {
            return Err(Error::config("schedule.warm_epo", "must be at least 1"));
        }
        Ok(())
    }

    pub fn warmup(&self, stage: usize) -> usize {
        self.warm_epo.saturating_sub(stage * self.warm_decay).max(1)
    }

    /// Epochs trained along the surviving lineage when `stages` splits run.
    pub fn lineage_epochs(&self, stages: usize) -> usize {
        if stages == 0 {
            return self.split_epos.first().copied().unwrap_or(0);
        }
        self.split_epos[stages - 1] + (0..stages).map(|s| self.warmup(s)).sum::<usize>()
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOrder {
    #[default]
    Ascending,
    Reverse,
    Random,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Hierarchy-wise splitting with mutual distillation.
    #[default]
    Hepnas,
    /// No splitting: one supernet trained for the same lineage budget.
    Oneshot,
    /// One edge per stage with greedy selection.
    Edgewise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub order: SplitOrder,
    pub baseline: Baseline,
    /// Stop after this many split stages.
    pub max_stages: Option<usize>,
    pub gm: GmConfig,
    /// When false no teacher is consulted at all, whatever the SMD weights.
    pub distillation: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            order: SplitOrder::Ascending,
            baseline: Baseline::Hepnas,
            max_stages: None,
            gm: GmConfig::default(),
            distillation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildLog {
    pub region: String,
    pub region_size: u64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitLog {
    pub edge: usize,
    pub group_a: OpSet,
    pub group_b: OpSet,
    pub cut: f64,
}

impl From<&OpSplit> for SplitLog {
    fn from(s: &OpSplit) -> Self {
        SplitLog {
            edge: s.edge,
            group_a: s.group_a,
            group_b: s.group_b,
            cut: s.cut,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    /// End node of the split hierarchy.
    pub node: usize,
    pub edges: Vec<usize>,
    pub split_epoch: usize,
    pub warmup: usize,
    pub parent_region: String,
    pub parent_region_size: u64,
    pub splits: Vec<SplitLog>,
    pub children: Vec<ChildLog>,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `None` before the first split.
    pub stage: Option<usize>,
    pub child: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub architecture: Architecture,
    pub supernet: Supernet,
    pub stages: Vec<StageLog>,
    pub epochs: Vec<EpochRecord>,
    pub seed: u64,
}

/// Splits `hierarchy` of `parent` into the Cartesian product of per-edge
/// op groups. Edges with a single allowed op contribute one factor. Children
/// are ordered with the first edge most significant and group A before B.
pub fn split_hierarchy(
    parent: &Supernet,
    hierarchy: &Hierarchy,
    data: &Dataset,
    gm: &GmConfig,
    seed: u64,
) -> Result<(Vec<Supernet>, Vec<OpSplit>)> {
    let mut splits = Vec::new();
    let mut factors: Vec<(usize, Vec<OpSet>)> = Vec::new();
    for &edge in &hierarchy.edges {
        let allowed = parent.region().allowed(edge);
        if allowed.len() < 2 {
            factors.push((edge, vec![allowed]));
            continue;
        }
        let m = gm_matrix(parent, edge, data, gm, derive_seed(seed, edge as u64))?;
        let s = min_cut_split(&m)?;
        factors.push((edge, vec![s.group_a, s.group_b]));
        splits.push(s);
    }
    let mut regions = vec![parent.region().clone()];
    for (edge, groups) in &factors {
        regions = regions
            .iter()
            .flat_map(|r| groups.iter().map(move |g| r.with_edge(*edge, *g)))
            .collect();
    }
    let children = regions.iter().map(|r| parent.inherit(r)).collect::<Result<Vec<_>>>()?;
    Ok((children, splits))
}

/// Index of the most accurate child on `valid`; ties go to the lowest index.
pub fn select_best(children: &[Supernet], valid: &Dataset, mode: EvalMode) -> Result<(usize, Vec<f64>)> {
    if children.is_empty() {
        return Err(Error::invalid("select_best: no children"));
    }
    let accs = children
        .iter()
        .map(|c| c.eval_accuracy(valid, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &a) in accs.iter().enumerate() {
        if a > accs[best] {
            best = i;
        }
    }
    Ok((best, accs))
}

struct Stage {
    hierarchy: Hierarchy,
    end_epoch: usize,
    warmup: usize,
}

fn plan_stages(spec: &CellSpec, schedule: &StageSchedule, opts: &SearchOptions, seed: u64) -> Vec<Stage> {
    let hs = hierarchies(spec);
    let mut stages: Vec<Stage> = match opts.baseline {
        Baseline::Oneshot => Vec::new(),
        Baseline::Hepnas => hs
            .into_iter()
            .enumerate()
            .map(|(s, h)| Stage {
                hierarchy: h,
                end_epoch: schedule.split_epos[s],
                warmup: schedule.warmup(s),
            })
            .collect(),
        Baseline::Edgewise => {
            // Each hierarchy's epoch window is shared evenly by its edges.
            let mut out = Vec::new();
            let mut start = 0;
            for (s, h) in hs.into_iter().enumerate() {
                let end = schedule.split_epos[s];
                let m = h.edges.len();
                for (j, &e) in h.edges.iter().enumerate() {
                    out.push(Stage {
                        hierarchy: Hierarchy {
                            node: h.node,
                            edges: vec![e],
                        },
                        end_epoch: start + (end - start) * (j + 1) / m,
                        warmup: schedule.warmup(s),
                    });
                }
                start = end;
            }
            out
        }
    };
    match opts.order {
        SplitOrder::Ascending => {}
        SplitOrder::Reverse => {
            let ends: Vec<usize> = stages.iter().map(|s| s.end_epoch).collect();
            let warm: Vec<usize> = stages.iter().map(|s| s.warmup).collect();
            stages.reverse();
            for (i, s) in stages.iter_mut().enumerate() {
                s.end_epoch = ends[i];
                s.warmup = warm[i];
            }
        }
        SplitOrder::Random => {
            let ends: Vec<usize> = stages.iter().map(|s| s.end_epoch).collect();
            let warm: Vec<usize> = stages.iter().map(|s| s.warmup).collect();
            stages.shuffle(&mut seeded(derive_seed(seed, 0x0de)));
            for (i, s) in stages.iter_mut().enumerate() {
                s.end_epoch = ends[i];
                s.warmup = warm[i];
            }
        }
    }
    if let Some(max) = opts.max_stages {
        stages.truncate(max);
    }
    stages
}

/// Runs the full staged search from a freshly initialized supernet over the
/// whole palette.
pub fn run_search(
    spec: &CellSpec,
    data: &Splits,
    train: &TrainConfig,
    schedule: &StageSchedule,
    smd: SmdWeights,
    seed: u64,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    schedule.validate(spec.intermediate_count())?;
    train.validate()?;
    smd.validate()?;
    opts.gm.validate()?;
    if let Some(0) = opts.max_stages {
        return Err(Error::config("mode.max_stages", "must be at least 1"));
    }

    let stages = plan_stages(spec, schedule, opts, seed);
    let horizon = match opts.baseline {
        Baseline::Oneshot => schedule.lineage_epochs(opts.max_stages.unwrap_or(spec.intermediate_count())),
        _ => stages.last().map_or(0, |s| s.end_epoch) + stages.iter().map(|s| s.warmup).sum::<usize>(),
    };

    let mut current = Supernet::new(spec.clone(), Region::full(spec), seed)?;
    let mut epochs = Vec::new();
    let mut logs = Vec::new();
    let mut trained_to = 0usize;

    if opts.baseline == Baseline::Oneshot {
        for _ in 0..horizon {
            let st = current.train_epoch(data, train, &Teachers::none(), horizon)?;
            epochs.push(EpochRecord {
                stage: None,
                child: 0,
                epoch: st.epoch,
                train_loss: st.train_loss,
                train_ce: st.train_ce,
            });
        }
    }

    for (index, stage) in stages.iter().enumerate() {
        let stage_label = Some(index);
        let pre_label = if index == 0 { None } else { Some(index - 1) };
        for _ in trained_to..stage.end_epoch {
            let st = current.train_epoch(data, train, &Teachers::none(), horizon)?;
            epochs.push(EpochRecord {
                stage: pre_label,
                child: 0,
                epoch: st.epoch,
                train_loss: st.train_loss,
                train_ce: st.train_ce,
            });
        }
        trained_to = stage.end_epoch;

        let teacher = current.clone();
        let split_epoch = current.epoch();
        let (mut children, splits) = split_hierarchy(
            &current,
            &stage.hierarchy,
            &data.train_w,
            &opts.gm,
            derive_seed(seed, 0x5000 + index as u64),
        )?;
        for _ in 0..stage.warmup {
            for m in 0..children.len() {
                let (left, rest) = children.split_at_mut(m);
                let (student, right) = rest.split_first_mut().unwrap();
                let teachers = if opts.distillation {
                    Teachers {
                        prev: Some(&teacher),
                        peers: left.iter().chain(right.iter()).collect(),
                        weights: smd,
                    }
                } else {
                    Teachers::none()
                };
                let st = student.train_epoch(data, train, &teachers, horizon)?;
                epochs.push(EpochRecord {
                    stage: stage_label,
                    child: m,
                    epoch: st.epoch,
                    train_loss: st.train_loss,
                    train_ce: st.train_ce,
                });
            }
        }
        let (best, accs) = select_best(&children, &data.valid, train.eval_mode)?;
        logs.push(StageLog {
            stage: index,
            node: stage.hierarchy.node,
            edges: stage.hierarchy.edges.clone(),
            split_epoch,
            warmup: stage.warmup,
            parent_region: teacher.region().encode(),
            parent_region_size: teacher.region().size(),
            splits: splits.iter().map(SplitLog::from).collect(),
            children: children
                .iter()
                .zip(&accs)
                .map(|(c, &a)| ChildLog {
                    region: c.region().encode(),
                    region_size: c.region().size(),
                    val_acc: a,
                })
                .collect(),
            selected: best,
        });
        current = children.swap_remove(best);
    }

    Ok(SearchResult {
        architecture: current.discretize(),
        supernet: current,
        stages: logs,
        epochs,
        seed,
    })
}
