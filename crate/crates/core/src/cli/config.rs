use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{gen_blobs, gen_spirals, split, Dataset, SplitSpec, Splits, MAX_SAMPLES};
use crate::error::{Error, Result};
use crate::grouping::GmConfig;
use crate::oracle::OracleConfig;
use crate::partition_search::{Baseline, SearchOptions, SmdWeights, SplitOrder, StageSchedule};
use crate::searchspace::{CellSpec, OpKind, Region};
use crate::supernet::TrainConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Blobs,
    Spirals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub generator: Generator,
    pub seed: u64,
    pub n: usize,
    /// Input dimension; spirals are always 2-dimensional.
    pub dim: usize,
    pub classes: usize,
    /// Blob center spread.
    pub spread: f64,
    /// Spiral angular noise.
    pub noise: f64,
    pub split: SplitSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            generator: Generator::Spirals,
            seed: 0,
            n: 600,
            dim: 2,
            classes: 3,
            spread: 0.5,
            noise: 0.2,
            split: SplitSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_SAMPLES {
            return Err(Error::config("dataset.n", format!("must be in 1..={MAX_SAMPLES}")));
        }
        if self.classes < 2 {
            return Err(Error::config("dataset.classes", "need at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::config("dataset.dim", "must be positive"));
        }
        if self.generator == Generator::Spirals && self.dim != 2 {
            return Err(Error::config("dataset.dim", "spirals are 2-dimensional"));
        }
        let (field, v) = match self.generator {
            Generator::Blobs => ("dataset.spread", self.spread),
            Generator::Spirals => ("dataset.noise", self.noise),
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(field, format!("must be non-negative, got {v}")));
        }
        self.split.validate()?;
        self.split.sizes(self.n).map_err(|e| Error::config("dataset.n", e.to_string()))?;
        Ok(())
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self.generator {
            Generator::Blobs => gen_blobs(self.seed, self.n, self.dim, self.classes, self.spread),
            Generator::Spirals => gen_spirals(self.seed, self.n, self.classes, self.noise),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    pub nodes: usize,
    pub width: usize,
    pub palette: Vec<OpKind>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            nodes: 4,
            width: 8,
            palette: OpKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    pub order: SplitOrder,
    pub baseline: Baseline,
    pub max_stages: Option<usize>,
    pub distillation: bool,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig {
            order: SplitOrder::Ascending,
            baseline: Baseline::Hepnas,
            max_stages: None,
            distillation: true,
        }
    }
}

/// Everything a run needs. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub space: SpaceConfig,
    pub train: TrainConfig,
    pub schedule: StageSchedule,
    pub smd: SmdWeights,
    pub grouping: GmConfig,
    pub oracle: OracleConfig,
    pub mode: ModeConfig,
}

impl RunConfig {
    /// Parses JSON, reporting the dotted path of the offending key.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let spec = self.cell_spec()?;
        self.train.validate()?;
        self.schedule.validate(spec.intermediate_count())?;
        self.smd.validate()?;
        self.grouping.validate()?;
        self.oracle.validate()?;
        if let Some(m) = self.mode.max_stages {
            if m == 0 || m > spec.intermediate_count() {
                return Err(Error::config(
                    "mode.max_stages",
                    format!("must be in 1..={}", spec.intermediate_count()),
                ));
            }
        }
        Ok(())
    }

    pub fn cell_spec(&self) -> Result<CellSpec> {
        CellSpec::new(
            self.space.nodes,
            self.space.width,
            self.dataset.dim,
            self.dataset.classes,
            self.space.palette.clone(),
        )
    }

    pub fn splits(&self) -> Result<Splits> {
        split(&self.dataset.generate()?, &self.dataset.split)
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            order: self.mode.order,
            baseline: self.mode.baseline,
            max_stages: self.mode.max_stages,
            gm: self.grouping.clone(),
            distillation: self.mode.distillation,
        }
    }

    /// Region the oracle tabulates: the whole space of this config.
    pub fn oracle_region(&self) -> Result<Region> {
        let spec = self.cell_spec()?;
        let region = Region::full(&spec);
        if region.size() > self.oracle.cap {
            return Err(Error::config(
                "oracle.cap",
                format!(
                    "search space holds {} architectures, above the cap of {}; shrink space.palette or space.nodes",
                    region.size(),
                    self.oracle.cap
                ),
            ));
        }
        Ok(region)
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = RunConfig::from_json(r#"{"train": {"lr_ww": 0.1}}"#).unwrap_err().to_string();
        assert!(err.starts_with("train"), "{err}");
        assert!(err.contains("lr_ww"), "{err}");
        let err = RunConfig::from_json(r#"{"space": {"palette": ["skip", "conv"]}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("space.palette"), "{err}");
    }

    #[test]
    fn cross_field_checks() {
        let mut cfg = RunConfig::default();
        cfg.schedule.split_epos = vec![5, 10];
        assert!(cfg.validate().unwrap_err().to_string().starts_with("schedule.split_epos"));

        let mut cfg = RunConfig::default();
        cfg.dataset.split.fractions = [0.5, 0.5, 0.5, 0.5];
        assert!(cfg.validate().unwrap_err().to_string().starts_with("dataset.split.fractions"));

        let mut cfg = RunConfig::default();
        cfg.space.palette.clear();
        assert!(cfg.validate().unwrap_err().to_string().starts_with("space.palette"));

        let mut cfg = RunConfig::default();
        cfg.mode.max_stages = Some(4);
        assert!(cfg.validate().unwrap_err().to_string().starts_with("mode.max_stages"));

        let mut cfg = RunConfig::default();
        cfg.dataset.n = 10442144815179337214;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("dataset.n"));

        let mut cfg = RunConfig::default();
        cfg.dataset.dim = 3;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("dataset.dim"));
    }

    #[test]
    fn oracle_cap_is_checked_up_front() {
        let cfg = RunConfig::default();
        assert!(cfg.oracle_region().unwrap_err().to_string().starts_with("oracle.cap"));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::from_json(r#"{"smd": {"lambda_prev": 0.5}}"#).unwrap();
        let b = RunConfig::from_json("{\n  \"smd\" : { \"lambda_prev\" : 0.5 }\n}").unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(a.sha256(), RunConfig::default().sha256());
    }
}
