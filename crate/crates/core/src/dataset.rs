//! Synthetic classification data and the four-way train/search/valid/test split.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    seed: Option<u64>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, seed: Option<u64>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "dataset: {} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("dataset: label {l} outside {classes} classes")));
        }
        if !inputs.is_finite() {
            return Err(Error::invalid("dataset: non-finite input value"));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            seed,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            seed: self.seed,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() || self.classes != other.classes {
            return Err(Error::invalid("concat: datasets differ in width or class count"));
        }
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let inputs = Tensor::new(vec![labels.len(), self.dim()], data)?;
        Dataset::new(inputs, labels, self.classes, self.seed)
    }

    /// Shuffled mini-batches of row indices; the last batch may be short.
    pub fn batch_indices(&self, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.inputs.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `f0,...,f{d-1},label` CSV layout. The class count is one
    /// more than the largest label seen; labels must be below
    /// [`MAX_CSV_CLASSES`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::invalid("dataset csv: need at least one feature column and a label column")
        })?;
        for (j, name) in header.iter().enumerate() {
            let expected = if j == d { "label".to_string() } else { format!("f{j}") };
            if name != expected {
                return Err(Error::invalid(format!(
                    "dataset csv: header column {j} is {name:?}, expected {expected:?}"
                )));
            }
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::invalid(format!("dataset csv: row {line} has {} fields", rec.len())));
            }
            for field in rec.iter().take(d) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("dataset csv: row {line}: bad number {field:?}")))?;
                data.push(v);
            }
            let l: usize = rec[d]
                .trim()
                .parse()
                .ok()
                .filter(|&l| l < MAX_CSV_CLASSES)
                .ok_or_else(|| Error::invalid(format!("dataset csv: row {line}: bad label {:?}", &rec[d])))?;
            labels.push(l);
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let inputs = Tensor::new(vec![labels.len(), d], data)?;
        Dataset::new(inputs, labels, classes, None)
    }
}

pub const MAX_CSV_CLASSES: usize = 1 << 16;

/// Largest sample count a generator accepts.
pub const MAX_SAMPLES: usize = 1 << 24;
pub const MAX_DIM: usize = 4096;

fn check_sizes(n: usize, d: usize, classes: usize) -> Result<()> {
    if n > MAX_SAMPLES {
        return Err(Error::invalid(format!("at most {MAX_SAMPLES} samples, got {n}")));
    }
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if d < 2 {
        return Err(Error::invalid(format!("need at least 2 input dimensions, got {d}")));
    }
    if d > MAX_DIM {
        return Err(Error::invalid(format!("at most {MAX_DIM} input dimensions, got {d}")));
    }
    if n < classes.saturating_mul(4) {
        return Err(Error::invalid(format!(
            "need at least {} samples for {classes} classes, got {n}",
            classes.saturating_mul(4)
        )));
    }
    Ok(())
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian clusters; sample `i` belongs to class `i mod C`.
pub fn gen_blobs(seed: u64, n: usize, d: usize, classes: usize, spread: f64) -> Result<Dataset> {
    check_sizes(n, d, classes)?;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be positive, got {spread}")));
    }
    let mut center_rng = seeded(derive_seed(seed, 1));
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| normal(&mut center_rng)).collect())
        .collect();
    let mut rng = seeded(derive_seed(seed, 2));
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &centers[c] {
            data.push(mu + spread * normal(&mut rng));
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, classes, Some(seed))
}

/// Interleaved planar spirals, one arm per class, each arm sweeping one full
/// turn outward. `noise` is the std-dev of Gaussian jitter on both coordinates.
pub fn gen_spirals(seed: u64, n: usize, classes: usize, noise: f64) -> Result<Dataset> {
    check_sizes(n, 2, classes)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = seeded(derive_seed(seed, 3));
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let per_class: Vec<usize> = (0..classes).map(|c| n / classes + usize::from(c < n % classes)).collect();
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let j = i / classes;
        let t = (j as f64 + 0.5) / per_class[c] as f64;
        let r = 0.1 + 0.9 * t;
        let theta = phase + std::f64::consts::TAU * (c as f64 / classes as f64 + t);
        data.push(r * theta.cos() + noise * normal(&mut rng));
        data.push(r * theta.sin() + noise * normal(&mut rng));
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, classes, Some(seed))
}

/// Fractions for the weight-training, architecture-training, validation and
/// test parts, and the shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub fractions: [f64; 4],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.35, 0.35, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::config("dataset.split.fractions", "every fraction must be positive"));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "dataset.split.fractions",
                format!("fractions sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }

    /// Part sizes for `n` rows by largest-remainder rounding.
    pub fn sizes(&self, n: usize) -> Result<[usize; 4]> {
        self.validate()?;
        let exact: Vec<f64> = self.fractions.iter().map(|f| f * n as f64).collect();
        let mut sizes = [0usize; 4];
        for (s, e) in sizes.iter_mut().zip(&exact) {
            *s = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = n
            .checked_sub(sizes.iter().sum::<usize>())
            .ok_or_else(|| Error::invalid(format!("split: {n} rows cannot be divided exactly")))?;
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        if let Some(p) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!(
                "split: part {p} would be empty for {n} rows with fractions {:?}",
                self.fractions
            )));
        }
        Ok(sizes)
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train_w: Dataset,
    pub train_alpha: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Class-stratified assignment of row indices to the four parts.
///
/// Rows are shuffled within each class, then dealt round-robin across classes
/// into one sequence that is cut into consecutive parts.
pub fn split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<[Vec<usize>; 4]> {
    let sizes = spec.sizes(dataset.len())?;
    let mut rng = seeded(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::with_capacity(dataset.len());
    for j in 0..longest {
        for members in &by_class {
            if let Some(&i) = members.get(j) {
                order.push(i);
            }
        }
    }
    let mut parts: [Vec<usize>; 4] = Default::default();
    let mut start = 0;
    for (part, &size) in parts.iter_mut().zip(&sizes) {
        *part = order[start..start + size].to_vec();
        start += size;
    }
    Ok(parts)
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let [a, b, c, d] = split_indices(dataset, spec)?;
    Ok(Splits {
        train_w: dataset.subset(&a),
        train_alpha: dataset.subset(&b),
        valid: dataset.subset(&c),
        test: dataset.subset(&d),
    })
}
