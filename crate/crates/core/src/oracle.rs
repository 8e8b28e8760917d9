//! Ground truth by exhaustive standalone training, and the ranking metrics
//! that compare supernet estimates against it.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Splits;
use crate::error::{Error, Result};
use crate::searchspace::{enumerate_archs, Architecture, CellSpec, Region};
use crate::supernet::{PathMode, Supernet, Teachers, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub base_seed: u64,
    /// Largest region the table may cover.
    pub cap: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            epochs: 60,
            lr: 0.05,
            lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 3e-4,
            clip_norm: 5.0,
            batch_size: 32,
            base_seed: 0,
            cap: crate::searchspace::DEFAULT_ENUM_CAP,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("oracle.epochs", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("oracle.lr", "must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::config("oracle.lr_min", "must lie in [0, lr]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("oracle.batch_size", "must be positive"));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::config("oracle.clip_norm", "must be positive"));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_w: self.lr,
            lr_w_min: self.lr_min,
            momentum: self.momentum,
            weight_decay_w: self.weight_decay,
            clip_norm: self.clip_norm,
            lr_alpha: 0.0,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        }
    }
}

/// Trains `arch` as a plain single-path network on `train_w ∪ train_alpha`
/// and returns its test-set accuracy.
pub fn train_standalone(spec: &CellSpec, arch: &Architecture, data: &Splits, cfg: &OracleConfig, seed: u64) -> Result<f64> {
    let region = Region::of_arch(arch);
    let mut net = Supernet::new(spec.clone(), region, seed)?;
    let train = data.train_w.concat(&data.train_alpha)?;
    let tc = cfg.train_config();
    for _ in 0..cfg.epochs {
        net.train_epoch_with(&train, None, &tc, &Teachers::none(), cfg.epochs, PathMode::Single(arch))?;
    }
    net.accuracy(&data.test, PathMode::Single(arch))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub arch_id: u64,
    pub encoding: String,
    pub seed: u64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    pub region: Region,
    pub rows: Vec<OracleRow>,
    pub config: OracleConfig,
}

pub fn arch_seed(base_seed: u64, arch_id: u64) -> u64 {
    base_seed ^ arch_id
}

pub fn write_rows_csv<W: Write>(rows: &[OracleRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["arch_id", "encoding", "seed", "test_acc"])?;
    for r in rows {
        w.write_record([r.arch_id.to_string(), r.encoding.clone(), r.seed.to_string(), r.test_acc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `arch_id,encoding,seed,test_acc` rows, checking every encoding
/// against `spec`.
pub fn read_rows_csv<R: Read>(reader: R, spec: &CellSpec) -> Result<Vec<OracleRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["arch_id", "encoding", "seed", "test_acc"] {
        return Err(Error::invalid(format!("oracle csv: unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::invalid(format!("oracle csv: row {line} has {} fields", rec.len())));
        }
        let bad = |what: &str| Error::invalid(format!("oracle csv: row {line}: bad {what}"));
        let arch_id = rec[0].parse().map_err(|_| bad("arch_id"))?;
        Architecture::decode(&rec[1], spec)?;
        let seed = rec[2].parse().map_err(|_| bad("seed"))?;
        let test_acc: f64 = rec[3].parse().map_err(|_| bad("test_acc"))?;
        if !(0.0..=1.0).contains(&test_acc) {
            return Err(bad("test_acc"));
        }
        rows.push(OracleRow {
            arch_id,
            encoding: rec[1].to_string(),
            seed,
            test_acc,
        });
    }
    Ok(rows)
}

/// Tabulates every architecture of `region`. Rows already present in
/// `existing` (matched by id, encoding and seed) are reused. `on_row` sees each
/// freshly computed row as soon as it is ready; the result is sorted by id.
pub fn build_table(
    spec: &CellSpec,
    region: &Region,
    data: &Splits,
    cfg: &OracleConfig,
    existing: &[OracleRow],
    workers: usize,
    on_row: &(dyn Fn(&OracleRow) + Sync),
) -> Result<OracleTable> {
    cfg.validate()?;
    region.validate(spec)?;
    let archs = enumerate_archs(region, cfg.cap)?;
    let mut done: BTreeMap<u64, OracleRow> = BTreeMap::new();
    for r in existing {
        let Some(arch) = archs.get(r.arch_id as usize) else { continue };
        if arch.encode() == r.encoding && r.seed == arch_seed(cfg.base_seed, r.arch_id) {
            done.insert(r.arch_id, r.clone());
        }
    }
    let todo: Vec<(u64, &Architecture)> = archs
        .iter()
        .enumerate()
        .map(|(i, a)| (i as u64, a))
        .filter(|(i, _)| !done.contains_key(i))
        .collect();
    let run = |&(id, arch): &(u64, &Architecture)| -> Result<OracleRow> {
        let seed = arch_seed(cfg.base_seed, id);
        let test_acc = train_standalone(spec, arch, data, cfg, seed)?;
        let row = OracleRow {
            arch_id: id,
            encoding: arch.encode(),
            seed,
            test_acc,
        };
        on_row(&row);
        Ok(row)
    };
    let fresh: Vec<OracleRow> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| todo.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        todo.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    for r in fresh {
        done.insert(r.arch_id, r);
    }
    Ok(OracleTable {
        region: region.clone(),
        rows: done.into_values().collect(),
        config: cfg.clone(),
    })
}

impl OracleTable {
    pub fn lookup(&self, encoding: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.encoding == encoding).map(|r| r.test_acc)
    }

    pub fn accuracy_map(&self) -> BTreeMap<&str, f64> {
        self.rows.iter().map(|r| (r.encoding.as_str(), r.test_acc)).collect()
    }

    pub fn best(&self) -> Option<&OracleRow> {
        self.rows
            .iter()
            .fold(None, |b: Option<&OracleRow>, r| match b {
                Some(b) if b.test_acc >= r.test_acc => Some(b),
                _ => Some(r),
            })
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() as u64 == self.region.size()
    }

    /// Rebuilds a table from CSV rows; every architecture of `region` must be present.
    pub fn from_rows(region: Region, rows: Vec<OracleRow>, config: OracleConfig) -> Result<OracleTable> {
        let mut rows = rows;
        rows.sort_by_key(|r| r.arch_id);
        for (i, r) in rows.iter().enumerate() {
            let expected = region
                .arch_at(i as u64)
                .ok_or_else(|| Error::invalid("oracle table has more rows than its region"))?;
            if r.arch_id != i as u64 || r.encoding != expected.encode() {
                return Err(Error::invalid(format!("oracle row {i} does not match region enumeration")));
            }
        }
        let t = OracleTable { region, rows, config };
        if !t.is_complete() {
            return Err(Error::invalid(format!(
                "oracle table covers {} of {} architectures",
                t.rows.len(),
                t.region.size()
            )));
        }
        Ok(t)
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side has no rank variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            op: "spearman",
            left: vec![xs.len()],
            right: vec![ys.len()],
        });
    }
    if xs.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman: non-finite value"));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Validation accuracy of every architecture in `region` under inherited
/// weights with a single-path forward.
pub fn estimate_region(supernet: &Supernet, region: &Region, valid: &crate::dataset::Dataset, cap: u64) -> Result<Vec<(Architecture, f64)>> {
    if !region.is_subset(supernet.region()) {
        return Err(Error::invalid("estimate region is not inside the supernet region"));
    }
    enumerate_archs(region, cap)?
        .into_iter()
        .map(|a| {
            let acc = supernet.accuracy(valid, PathMode::Single(&a))?;
            Ok((a, acc))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Absent when the final region holds fewer than two architectures or
    /// either side is constant.
    pub spearman: Option<f64>,
    pub final_region_size: u64,
    pub selected: String,
    pub selected_acc: f64,
    pub best: String,
    pub best_acc: f64,
    pub regret: f64,
    /// Architectures in the table strictly more accurate than the selection.
    pub better_count: u64,
    pub table_size: u64,
    /// Fraction of the table at or below the selection's accuracy.
    pub percentile: f64,
}

impl RankReport {
    /// Whether the selection ranks within the top `fraction` of the table.
    pub fn in_top(&self, fraction: f64) -> bool {
        (self.better_count as f64) < fraction * self.table_size as f64
    }
}

pub fn rank_report(
    selected: &Architecture,
    final_region: &Region,
    table: &OracleTable,
    estimates: &[(Architecture, f64)],
) -> Result<RankReport> {
    if !final_region.is_subset(&table.region) {
        return Err(Error::invalid(format!(
            "final region {} is not covered by the oracle table region {}",
            final_region.encode(),
            table.region.encode()
        )));
    }
    let accs = table.accuracy_map();
    let oracle_of = |a: &Architecture| {
        accs.get(a.encode().as_str())
            .copied()
            .ok_or_else(|| Error::invalid(format!("architecture {a} missing from the oracle table")))
    };
    let mut xs = Vec::with_capacity(estimates.len());
    let mut ys = Vec::with_capacity(estimates.len());
    for (a, est) in estimates {
        if !final_region.contains(a) {
            return Err(Error::invalid(format!("estimate for {a} lies outside the final region")));
        }
        xs.push(*est);
        ys.push(oracle_of(a)?);
    }
    let rho = if xs.len() >= 2 { spearman(&xs, &ys)? } else { None };
    let selected_acc = oracle_of(selected)?;
    let best = table.best().ok_or_else(|| Error::invalid("empty oracle table"))?;
    let better = table.rows.iter().filter(|r| r.test_acc > selected_acc).count() as u64;
    let at_or_below = table.rows.iter().filter(|r| r.test_acc <= selected_acc).count();
    Ok(RankReport {
        spearman: rho,
        final_region_size: final_region.size(),
        selected: selected.encode(),
        selected_acc,
        best: best.encoding.clone(),
        best_acc: best.test_acc,
        regret: best.test_acc - selected_acc,
        better_count: better,
        table_size: table.rows.len() as u64,
        percentile: at_or_below as f64 / table.rows.len() as f64,
    })
}
