//! Command-line driver: `search`, `oracle`, `report` and `ablate`.
//!
//! Exit codes: 0 on success, 2 when the configuration or inputs are
//! rejected before any work starts, 1 when a run fails.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{DatasetConfig, Generator, ModeConfig, RunConfig, SpaceConfig};

use crate::dataset::Splits;
use crate::error::Error;
use crate::oracle::{self, estimate_region, rank_report, OracleConfig, OracleRow, OracleTable, RankReport};
use crate::partition_search::{run_search, SearchResult, SmdWeights, SplitOrder, StageLog};
use crate::searchspace::{Architecture, Region};
use crate::supernet::Supernet;

pub const ARTIFACT_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "HEPNAS_WORKERS";

pub const RESULT_FILE: &str = "result.json";
pub const SEARCH_LOG_FILE: &str = "search_log.csv";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const CHECKPOINT_FILE: &str = "supernet.json";
pub const ORACLE_FILE: &str = "oracle_table.csv";
pub const ORACLE_PARTIAL_FILE: &str = "oracle_table.partial.csv";
pub const ORACLE_META_FILE: &str = "oracle_meta.json";
pub const RANK_REPORT_FILE: &str = "rank_report.json";
pub const STAGE_SUMMARY_FILE: &str = "stage_summary.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Parser, Debug)]
#[command(name = "hepnas", version, about = "Hierarchy-wise supernet partitioning search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the staged search and write the selected architecture.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every architecture of the config's space standalone.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep rows already present in the output directory.
        #[arg(long)]
        resume: bool,
        /// Parallel training jobs (falls back to HEPNAS_WORKERS, then 1).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare a search run against an oracle table.
    Report {
        #[arg(long)]
        search: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid with shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        grid: Grid,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds shared by every grid row.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Oracle directory used to score the selected architectures.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Smd,
    Order,
    Hierarchies,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn rejected(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: msg.to_string(),
    }
}

fn failed(msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: 1,
        message: msg.to_string(),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::CapExceeded { .. } => rejected(e),
            _ => failed(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Search { config, seed, out } => cmd_search(&config, seed, &out),
        Command::Oracle {
            config,
            out,
            resume,
            workers,
        } => cmd_oracle(&config, &out, resume, resolve_workers(workers)?),
        Command::Report { search, oracle, out } => cmd_report(&search, &oracle, &out),
        Command::Ablate {
            config,
            grid,
            out,
            seeds,
            oracle,
        } => cmd_ablate(&config, grid, &out, &seeds, oracle.as_deref()),
    }
}

fn resolve_workers(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| rejected(format!("{WORKERS_ENV}: expected a positive integer, got {v:?}")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(rejected("--workers: must be positive"));
    }
    Ok(n)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| rejected(format!("{}: {e}", path.display())))?;
    let cfg = RunConfig::from_json(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| rejected(format!("{}: {e}", path.display())))
}

fn create_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| failed(format!("{}: {e}", out.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| failed(format!("{}: {e}", path.display())))
}

/// One manifest line per artifact written by a command.
struct Manifest {
    config_sha256: String,
    seed: u64,
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn new(config_sha256: String, seed: u64) -> Self {
        Manifest {
            config_sha256,
            seed,
            entries: Vec::new(),
        }
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_file(&dir.join(name), bytes)?;
        self.entries.push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        Ok(())
    }

    fn finish(self, dir: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let row_err = |e: csv::Error| failed(e);
        w.write_record(["artifact", "sha256", "config_sha256", "seed", "version"])
            .map_err(row_err)?;
        for (name, hash) in &self.entries {
            w.write_record([
                name.as_str(),
                hash.as_str(),
                self.config_sha256.as_str(),
                &self.seed.to_string(),
                &ARTIFACT_VERSION.to_string(),
            ])
            .map_err(row_err)?;
        }
        let bytes = w.into_inner().map_err(|e| failed(e.to_string()))?;
        write_file(&dir.join(MANIFEST_FILE), &bytes)
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(failed)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
    pub architecture: String,
    pub final_region: String,
    pub final_region_size: u64,
    pub final_val_acc: f64,
    pub supernet_digest: String,
    pub stages: Vec<StageLog>,
}

fn summarize(cfg: &RunConfig, data: &Splits, res: &SearchResult) -> CliResult<SearchSummary> {
    Ok(SearchSummary {
        version: ARTIFACT_VERSION,
        config_sha256: cfg.sha256(),
        seed: res.seed,
        config: cfg.clone(),
        architecture: res.architecture.encode(),
        final_region: res.supernet.region().encode(),
        final_region_size: res.supernet.region().size(),
        final_val_acc: res.supernet.eval_accuracy(&data.valid, cfg.train.eval_mode)?,
        supernet_digest: res.supernet.digest(),
        stages: res.stages.clone(),
    })
}

fn search_log_csv(res: &SearchResult) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut rows = vec![vec![
        "stage".to_string(),
        "child_id".into(),
        "region".into(),
        "region_size".into(),
        "val_acc".into(),
        "selected".into(),
    ]];
    for s in &res.stages {
        for (i, c) in s.children.iter().enumerate() {
            rows.push(vec![
                s.stage.to_string(),
                i.to_string(),
                c.region.clone(),
                c.region_size.to_string(),
                c.val_acc.to_string(),
                (i == s.selected).to_string(),
            ]);
        }
    }
    for r in rows {
        w.write_record(&r).map_err(failed)?;
    }
    w.into_inner().map_err(|e| failed(e.to_string()))
}

fn epoch_log_csv(res: &SearchResult) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "child", "epoch", "train_loss", "train_ce"])
        .map_err(failed)?;
    for e in &res.epochs {
        w.write_record([
            e.stage.map(|s| s.to_string()).unwrap_or_default(),
            e.child.to_string(),
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_ce.to_string(),
        ])
        .map_err(failed)?;
    }
    w.into_inner().map_err(|e| failed(e.to_string()))
}

/// Runs the configured search for one seed.
pub fn search_once(cfg: &RunConfig, data: &Splits, seed: u64) -> CliResult<SearchResult> {
    let spec = cfg.cell_spec()?;
    Ok(run_search(
        &spec,
        data,
        &cfg.train,
        &cfg.schedule,
        cfg.smd,
        seed,
        &cfg.search_options(),
    )?)
}

pub fn cmd_search(config: &Path, seed: u64, out: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let data = cfg.splits()?;
    let res = search_once(&cfg, &data, seed)?;
    let summary = summarize(&cfg, &data, &res)?;
    create_dir(out)?;
    let mut m = Manifest::new(cfg.sha256(), seed);
    m.write(out, RESULT_FILE, &to_json(&summary)?)?;
    m.write(out, SEARCH_LOG_FILE, &search_log_csv(&res)?)?;
    m.write(out, EPOCH_LOG_FILE, &epoch_log_csv(&res)?)?;
    let mut ck = res.supernet.to_json()?;
    ck.push('\n');
    m.write(out, CHECKPOINT_FILE, ck.as_bytes())?;
    m.finish(out)?;
    println!("{}", summary.architecture);
    Ok(())
}

/// Identifies the setting an oracle table was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleMeta {
    pub version: u32,
    pub dataset: DatasetConfig,
    pub space: SpaceConfig,
    pub oracle: OracleConfig,
    pub region: Region,
}

impl OracleMeta {
    fn of(cfg: &RunConfig, region: Region) -> Self {
        OracleMeta {
            version: ARTIFACT_VERSION,
            dataset: cfg.dataset.clone(),
            space: cfg.space.clone(),
            oracle: cfg.oracle.clone(),
            region,
        }
    }

    fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_string(self).expect("meta serializes").as_bytes()))
    }
}

fn read_rows_file(path: &Path, spec: &crate::searchspace::CellSpec) -> CliResult<Vec<OracleRow>> {
    let file = fs::File::open(path).map_err(|e| rejected(format!("{}: {e}", path.display())))?;
    oracle::read_rows_csv(file, spec).map_err(|e| rejected(format!("{}: {e}", path.display())))
}

pub fn cmd_oracle(config: &Path, out: &Path, resume: bool, workers: usize) -> CliResult<()> {
    let cfg = load_config(config)?;
    let region = cfg.oracle_region()?;
    let spec = cfg.cell_spec()?;
    let meta = OracleMeta::of(&cfg, region.clone());
    let table_path = out.join(ORACLE_FILE);
    let partial_path = out.join(ORACLE_PARTIAL_FILE);
    let meta_path = out.join(ORACLE_META_FILE);

    let mut existing = Vec::new();
    if resume {
        if meta_path.exists() {
            let old: OracleMeta = serde_json::from_str(&read_input(&meta_path)?)
                .map_err(|e| rejected(format!("{}: {e}", meta_path.display())))?;
            if old != meta {
                return Err(rejected(format!(
                    "{}: existing table was built under a different dataset, space or oracle config",
                    meta_path.display()
                )));
            }
        }
        for p in [&table_path, &partial_path] {
            if p.exists() {
                existing.extend(read_rows_file(p, &spec)?);
            }
        }
    }

    create_dir(out)?;
    write_file(&meta_path, &to_json(&meta)?)?;
    let data = cfg.splits()?;

    let partial = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&partial_path)
        .map_err(|e| failed(format!("{}: {e}", partial_path.display())))?;
    let needs_header = partial.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let sink = Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(partial));
    if needs_header {
        let mut w = sink.lock().unwrap();
        w.write_record(["arch_id", "encoding", "seed", "test_acc"]).map_err(failed)?;
        w.flush().map_err(failed)?;
    }
    let total = region.size();
    let done = Mutex::new(existing.len() as u64);
    let on_row = |r: &OracleRow| {
        let mut w = sink.lock().unwrap();
        let _ = w.write_record([r.arch_id.to_string(), r.encoding.clone(), r.seed.to_string(), r.test_acc.to_string()]);
        let _ = w.flush();
        let mut d = done.lock().unwrap();
        *d += 1;
        eprintln!("[{}/{}] {} {:.4}", *d, total, r.encoding, r.test_acc);
    };
    let table = oracle::build_table(&spec, &region, &data, &cfg.oracle, &existing, workers, &on_row)?;
    drop(sink);

    let mut buf = Vec::new();
    oracle::write_rows_csv(&table.rows, &mut buf)?;
    let mut m = Manifest::new(meta.sha256(), cfg.oracle.base_seed);
    m.write(out, ORACLE_FILE, &buf)?;
    m.entries.push((
        ORACLE_META_FILE.to_string(),
        hex::encode(Sha256::digest(&to_json(&meta)?)),
    ));
    m.finish(out)?;
    let _ = fs::remove_file(&partial_path);
    println!("{} rows", table.rows.len());
    Ok(())
}

/// Loads an oracle directory written by `cmd_oracle`.
pub fn load_oracle(dir: &Path) -> CliResult<(OracleMeta, OracleTable)> {
    let meta_path = dir.join(ORACLE_META_FILE);
    let meta: OracleMeta = serde_json::from_str(&read_input(&meta_path)?)
        .map_err(|e| rejected(format!("{}: {e}", meta_path.display())))?;
    let cfg = RunConfig {
        dataset: meta.dataset.clone(),
        space: meta.space.clone(),
        ..RunConfig::default()
    };
    let spec = cfg.cell_spec()?;
    let rows = read_rows_file(&dir.join(ORACLE_FILE), &spec)?;
    let table = OracleTable::from_rows(meta.region.clone(), rows, meta.oracle.clone())
        .map_err(|e| rejected(format!("{}: {e}", dir.display())))?;
    Ok((meta, table))
}

/// Loads a search directory written by `cmd_search`.
pub fn load_search(dir: &Path) -> CliResult<(SearchSummary, Supernet)> {
    let path = dir.join(RESULT_FILE);
    let summary: SearchSummary =
        serde_json::from_str(&read_input(&path)?).map_err(|e| rejected(format!("{}: {e}", path.display())))?;
    summary.config.validate()?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let net = Supernet::from_json(&read_input(&ck_path)?).map_err(|e| rejected(format!("{}: {e}", ck_path.display())))?;
    if net.digest() != summary.supernet_digest {
        return Err(rejected(format!(
            "{}: checkpoint does not match {}",
            ck_path.display(),
            RESULT_FILE
        )));
    }
    Ok((summary, net))
}

fn oracle_stats(table: &OracleTable, region: &Region) -> (f64, f64, f64) {
    let accs: Vec<f64> = table
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| table.region.arch_at(*i as u64).is_some_and(|a| region.contains(&a)))
        .map(|(_, r)| r.test_acc)
        .collect();
    let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    (min, mean, max)
}

fn stage_summary_csv(summary: &SearchSummary, table: &OracleTable) -> CliResult<Vec<u8>> {
    let mut regions: Vec<(String, Option<f64>)> = Vec::new();
    if let Some(first) = summary.stages.first() {
        regions.push((first.parent_region.clone(), None));
    }
    for s in &summary.stages {
        let c = &s.children[s.selected];
        regions.push((c.region.clone(), Some(c.val_acc)));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stage",
        "region",
        "region_size",
        "selected_val_acc",
        "oracle_min",
        "oracle_mean",
        "oracle_max",
    ])
    .map_err(failed)?;
    let spec = summary.config.cell_spec()?;
    for (i, (enc, val)) in regions.iter().enumerate() {
        let region = Region::decode(enc, &spec)?;
        let (lo, mean, hi) = oracle_stats(table, &region);
        w.write_record([
            i.to_string(),
            enc.clone(),
            region.size().to_string(),
            val.map(|v| v.to_string()).unwrap_or_default(),
            lo.to_string(),
            mean.to_string(),
            hi.to_string(),
        ])
        .map_err(failed)?;
    }
    w.into_inner().map_err(|e| failed(e.to_string()))
}

pub fn cmd_report(search: &Path, oracle_dir: &Path, out: &Path) -> CliResult<()> {
    let (summary, net) = load_search(search)?;
    let (meta, table) = load_oracle(oracle_dir)?;
    let cfg = &summary.config;
    if meta.dataset != cfg.dataset || meta.space != cfg.space {
        return Err(rejected("oracle table and search run use different dataset or space settings"));
    }
    let data = cfg.splits()?;
    let spec = cfg.cell_spec()?;
    let selected = Architecture::decode(&summary.architecture, &spec)?;
    let estimates = estimate_region(&net, net.region(), &data.valid, cfg.oracle.cap)?;
    let report = rank_report(&selected, net.region(), &table, &estimates).map_err(rejected)?;
    let stages = stage_summary_csv(&summary, &table)?;
    create_dir(out)?;
    let mut m = Manifest::new(summary.config_sha256.clone(), summary.seed);
    m.write(out, RANK_REPORT_FILE, &to_json(&report)?)?;
    m.write(out, STAGE_SUMMARY_FILE, &stages)?;
    m.finish(out)?;
    match report.spearman {
        Some(r) => println!("spearman {r:.4} regret {:.4}", report.regret),
        None => println!("spearman n/a regret {:.4}", report.regret),
    }
    Ok(())
}

/// One grid row: a named variant of the base config.
pub fn grid_variants(cfg: &RunConfig, grid: Grid) -> CliResult<Vec<(String, RunConfig)>> {
    let mut out = Vec::new();
    match grid {
        Grid::Smd => {
            for (lp, lq) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let mut c = cfg.clone();
                c.smd = SmdWeights {
                    lambda_prev: lp,
                    lambda_peer: lq,
                };
                out.push((format!("prev={lp},peer={lq}"), c));
            }
        }
        Grid::Order => {
            for (name, o) in [
                ("ascending", SplitOrder::Ascending),
                ("reverse", SplitOrder::Reverse),
                ("random", SplitOrder::Random),
            ] {
                let mut c = cfg.clone();
                c.mode.order = o;
                out.push((name.to_string(), c));
            }
        }
        Grid::Hierarchies => {
            for k in 1..=cfg.cell_spec()?.intermediate_count() {
                let mut c = cfg.clone();
                c.mode.max_stages = Some(k);
                out.push((format!("stages={k}"), c));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub architecture: String,
    pub final_region_size: u64,
    pub final_val_acc: f64,
    pub oracle_acc: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn cmd_ablate(config: &Path, grid: Grid, out: &Path, seeds: &[u64], oracle_dir: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(config)?;
    if seeds.is_empty() {
        return Err(rejected("--seeds: at least one seed is required"));
    }
    let oracle = match oracle_dir {
        Some(d) => {
            let (meta, table) = load_oracle(d)?;
            if meta.dataset != cfg.dataset || meta.space != cfg.space {
                return Err(rejected("oracle table and config use different dataset or space settings"));
            }
            Some(table)
        }
        None => None,
    };
    let variants = grid_variants(&cfg, grid)?;
    for (_, c) in &variants {
        c.validate()?;
    }
    let data = cfg.splits()?;
    let mut rows = Vec::new();
    for (name, c) in &variants {
        for &seed in seeds {
            let res = search_once(c, &data, seed)?;
            let (oracle_acc, spearman) = match &oracle {
                Some(t) => {
                    let est = estimate_region(&res.supernet, res.supernet.region(), &data.valid, c.oracle.cap)?;
                    let rep: RankReport = rank_report(&res.architecture, res.supernet.region(), t, &est)?;
                    (Some(rep.selected_acc), rep.spearman)
                }
                None => (None, None),
            };
            eprintln!("{name} seed={seed} {}", res.architecture);
            rows.push(AblationRow {
                variant: name.clone(),
                seed,
                architecture: res.architecture.encode(),
                final_region_size: res.supernet.region().size(),
                final_val_acc: res.supernet.eval_accuracy(&data.valid, c.train.eval_mode)?,
                oracle_acc,
                spearman,
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "grid",
        "variant",
        "seed",
        "architecture",
        "final_region_size",
        "final_val_acc",
        "oracle_acc",
        "spearman",
    ])
    .map_err(failed)?;
    let grid_name = format!("{grid:?}").to_lowercase();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([
            grid_name.clone(),
            r.variant.clone(),
            r.seed.to_string(),
            r.architecture.clone(),
            r.final_region_size.to_string(),
            r.final_val_acc.to_string(),
            opt(r.oracle_acc),
            opt(r.spearman),
        ])
        .map_err(failed)?;
    }
    let bytes = w.into_inner().map_err(|e| failed(e.to_string()))?;
    create_dir(out)?;
    let mut m = Manifest::new(cfg.sha256(), seeds[0]);
    m.write(out, &format!("ablate_{grid_name}.csv"), &bytes)?;
    m.finish(out)?;
    let _ = std::io::stdout().flush();
    Ok(())
}
