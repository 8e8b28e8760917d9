//! Cell DAG model: candidate operations, edges, hierarchies, regions
//! (sub-search-spaces) and discrete architectures.
//!
//! A cell has input node 0 and intermediate nodes `1..N`. Every intermediate
//! node `k` receives one edge from each predecessor `i < k`. Edges are
//! numbered by end node, then by start node, so the edges of one hierarchy
//! are contiguous: `(0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ...`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default upper bound on the number of architectures [`enumerate_archs`]
/// will materialize.
pub const DEFAULT_ENUM_CAP: u64 = 4096;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Zero,
    Skip,
    AvgPair,
    AffineRelu,
    AffineTanh,
}

impl OpKind {
    /// Canonical palette order. All op sets iterate in this order.
    pub const ALL: [OpKind; 5] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::AvgPair,
        OpKind::AffineRelu,
        OpKind::AffineTanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Skip => "skip",
            OpKind::AvgPair => "avg_pair",
            OpKind::AffineRelu => "affine_relu",
            OpKind::AffineTanh => "affine_tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Whether the op owns a `W×W` weight and a bias.
    pub fn is_parametric(self) -> bool {
        matches!(self, OpKind::AffineRelu | OpKind::AffineTanh)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of operation kinds, iterated in canonical order.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpSet(u8);

impl OpSet {
    pub fn empty() -> Self {
        OpSet(0)
    }

    pub fn single(op: OpKind) -> Self {
        OpSet(op.bit())
    }

    pub fn contains(self, op: OpKind) -> bool {
        self.0 & op.bit() != 0
    }

    pub fn insert(&mut self, op: OpKind) {
        self.0 |= op.bit();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: OpSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersect(self, other: OpSet) -> OpSet {
        OpSet(self.0 & other.0)
    }

    pub fn union(self, other: OpSet) -> OpSet {
        OpSet(self.0 | other.0)
    }

    pub fn difference(self, other: OpSet) -> OpSet {
        OpSet(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = OpKind> + Clone {
        OpKind::ALL.into_iter().filter(move |op| self.contains(*op))
    }

    pub fn ops(self) -> Vec<OpKind> {
        self.iter().collect()
    }

    /// Position of `op` within this set's canonical ordering.
    pub fn position(self, op: OpKind) -> Option<usize> {
        self.iter().position(|o| o == op)
    }

    pub fn first(self) -> Option<OpKind> {
        self.iter().next()
    }
}

impl FromIterator<OpKind> for OpSet {
    fn from_iter<I: IntoIterator<Item = OpKind>>(iter: I) -> Self {
        let mut s = OpSet::empty();
        for op in iter {
            s.insert(op);
        }
        s
    }
}

impl fmt::Display for OpSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(OpKind::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl Serialize for OpSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.ops().serialize(s)
    }
}

impl<'de> Deserialize<'de> for OpSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ops = Vec::<OpKind>::deserialize(d)?;
        Ok(ops.into_iter().collect())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

pub const MAX_WIDTH: usize = 4096;

/// Cell topology and sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCellSpec")]
pub struct CellSpec {
    nodes: usize,
    width: usize,
    input_dim: usize,
    classes: usize,
    palette: OpSet,
}

#[derive(Deserialize)]
struct RawCellSpec {
    nodes: usize,
    width: usize,
    input_dim: usize,
    classes: usize,
    palette: OpSet,
}

impl TryFrom<RawCellSpec> for CellSpec {
    type Error = Error;
    fn try_from(r: RawCellSpec) -> Result<Self> {
        CellSpec::new(r.nodes, r.width, r.input_dim, r.classes, r.palette.ops())
    }
}

impl CellSpec {
    /// `nodes` counts the input node plus every intermediate node.
    pub fn new(nodes: usize, width: usize, input_dim: usize, classes: usize, palette: Vec<OpKind>) -> Result<Self> {
        if !(2..=12).contains(&nodes) {
            return Err(Error::config("space.nodes", format!("must be in 2..=12, got {nodes}")));
        }
        if !(1..=MAX_WIDTH).contains(&width) {
            return Err(Error::config("space.width", format!("must be in 1..={MAX_WIDTH}")));
        }
        if input_dim == 0 {
            return Err(Error::config("dataset.dim", "must be positive"));
        }
        if classes < 2 {
            return Err(Error::config("dataset.classes", "need at least 2 classes"));
        }
        let set: OpSet = palette.iter().copied().collect();
        if set.is_empty() {
            return Err(Error::config("space.palette", "must hold at least one operation"));
        }
        if set.len() != palette.len() {
            return Err(Error::config("space.palette", "duplicate operation"));
        }
        Ok(CellSpec {
            nodes,
            width,
            input_dim,
            classes,
            palette: set,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn intermediate_count(&self) -> usize {
        self.nodes - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn palette(&self) -> OpSet {
        self.palette
    }

    pub fn edge_count(&self) -> usize {
        self.nodes * (self.nodes - 1) / 2
    }

    pub fn edges(&self) -> Vec<Edge> {
        (1..self.nodes)
            .flat_map(|to| (0..to).map(move |from| Edge { from, to }))
            .collect()
    }

    pub fn edge(&self, id: usize) -> Edge {
        self.edges()[id]
    }

    pub fn edge_id(&self, from: usize, to: usize) -> Option<usize> {
        (from < to && to < self.nodes).then(|| to * (to - 1) / 2 + from)
    }
}

/// Edges sharing one end node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hierarchy {
    pub node: usize,
    /// Edge ids, ascending start node.
    pub edges: Vec<usize>,
}

/// One hierarchy per intermediate node, in ascending node order.
pub fn hierarchies(spec: &CellSpec) -> Vec<Hierarchy> {
    (1..spec.nodes())
        .map(|k| Hierarchy {
            node: k,
            edges: (0..k).map(|i| spec.edge_id(i, k).unwrap()).collect(),
        })
        .collect()
}

/// Per-edge allowed operation sets: a (sub-)search space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    sets: Vec<OpSet>,
}

impl Region {
    pub fn full(spec: &CellSpec) -> Self {
        Region {
            sets: vec![spec.palette(); spec.edge_count()],
        }
    }

    pub fn new(spec: &CellSpec, sets: Vec<OpSet>) -> Result<Self> {
        let r = Region { sets };
        r.validate(spec)?;
        Ok(r)
    }

    pub fn validate(&self, spec: &CellSpec) -> Result<()> {
        if self.sets.len() != spec.edge_count() {
            return Err(Error::invalid(format!(
                "region has {} edges, cell has {}",
                self.sets.len(),
                spec.edge_count()
            )));
        }
        for (e, s) in self.sets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::invalid(format!("region edge {e} has no allowed operation")));
            }
            if !s.is_subset(spec.palette()) {
                return Err(Error::invalid(format!("region edge {e} allows ops outside the palette")));
            }
        }
        Ok(())
    }

    /// The single-architecture region.
    pub fn of_arch(arch: &Architecture) -> Self {
        Region {
            sets: arch.ops().iter().map(|&op| OpSet::single(op)).collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.sets.len()
    }

    pub fn allowed(&self, edge: usize) -> OpSet {
        self.sets[edge]
    }

    pub fn sets(&self) -> &[OpSet] {
        &self.sets
    }

    /// Copy with edge `edge` restricted to `set`.
    pub fn with_edge(&self, edge: usize, set: OpSet) -> Region {
        let mut r = self.clone();
        r.sets[edge] = set;
        r
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.sets.len() == other.sets.len() && self.sets.iter().zip(&other.sets).all(|(a, b)| a.is_subset(*b))
    }

    /// Per-edge intersection; `None` when some edge becomes empty.
    pub fn intersect(&self, other: &Region) -> Option<Region> {
        if self.sets.len() != other.sets.len() {
            return None;
        }
        let sets: Vec<OpSet> = self.sets.iter().zip(&other.sets).map(|(a, b)| a.intersect(*b)).collect();
        sets.iter().all(|s| !s.is_empty()).then_some(Region { sets })
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        arch.ops().len() == self.sets.len() && arch.ops().iter().zip(&self.sets).all(|(op, s)| s.contains(*op))
    }

    /// Number of architectures; saturates at `u64::MAX`.
    pub fn size(&self) -> u64 {
        self.sets
            .iter()
            .try_fold(1u64, |acc, s| acc.checked_mul(s.len() as u64))
            .unwrap_or(u64::MAX)
    }

    /// `zero+skip|affine_relu|...`
    pub fn encode(&self) -> String {
        self.sets.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
    }

    /// Inverse of [`Region::encode`].
    pub fn decode(text: &str, spec: &CellSpec) -> Result<Region> {
        let sets = text
            .split('|')
            .map(|part| {
                part.split('+')
                    .map(|name| {
                        OpKind::from_name(name).ok_or_else(|| Error::invalid(format!("unknown op {name:?} in region {text:?}")))
                    })
                    .collect::<Result<OpSet>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Region::new(spec, sets)
    }

    /// Architecture number `index` in the lexicographic order of
    /// [`enumerate_archs`] (edge 0 most significant).
    pub fn arch_at(&self, mut index: u64) -> Option<Architecture> {
        if index >= self.size() {
            return None;
        }
        let mut ops = vec![OpKind::Zero; self.sets.len()];
        for (e, s) in self.sets.iter().enumerate().rev() {
            let n = s.len() as u64;
            ops[e] = s.iter().nth((index % n) as usize).unwrap();
            index /= n;
        }
        Some(Architecture { ops })
    }

    /// Inverse of [`Region::arch_at`].
    pub fn index_of(&self, arch: &Architecture) -> Option<u64> {
        if !self.contains(arch) {
            return None;
        }
        let mut index = 0u64;
        for (op, s) in arch.ops().iter().zip(&self.sets) {
            index = index * s.len() as u64 + s.position(*op).unwrap() as u64;
        }
        Some(index)
    }
}

pub fn region_size(region: &Region) -> u64 {
    region.size()
}

/// One chosen operation per edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Architecture {
    ops: Vec<OpKind>,
}

impl Architecture {
    pub fn new(ops: Vec<OpKind>) -> Self {
        Architecture { ops }
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn op(&self, edge: usize) -> OpKind {
        self.ops[edge]
    }

    /// Op names joined by `|` in edge order.
    pub fn encode(&self) -> String {
        self.ops.iter().map(|op| op.name()).collect::<Vec<_>>().join("|")
    }

    pub fn decode(text: &str, spec: &CellSpec) -> Result<Architecture> {
        let ops = text
            .split('|')
            .map(|name| {
                let op = OpKind::from_name(name.trim())
                    .ok_or_else(|| Error::invalid(format!("unknown operation {name:?}")))?;
                if !spec.palette().contains(op) {
                    return Err(Error::invalid(format!("operation {name} is not in the palette")));
                }
                Ok(op)
            })
            .collect::<Result<Vec<_>>>()?;
        if ops.len() != spec.edge_count() {
            return Err(Error::invalid(format!(
                "architecture has {} edges, cell has {}",
                ops.len(),
                spec.edge_count()
            )));
        }
        Ok(Architecture { ops })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Every architecture in `region`, in lexicographic order (edge 0 most
/// significant, ops in canonical order).
pub fn enumerate_archs(region: &Region, cap: u64) -> Result<Vec<Architecture>> {
    let size = region.size();
    if size > cap {
        return Err(Error::CapExceeded { size, cap });
    }
    Ok((0..size).map(|i| region.arch_at(i).unwrap()).collect())
}
