//! Seeded experiment runs, result aggregation and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, MethodKind};
use crate::data::{
    even_counts, load_credit, load_spambase, normalize_features, partition_features,
    split_indices, synthetic_gaussian, Dataset, ImdbCorpus, Normalization, SplitSpec, IMDB_VOCAB,
};
use crate::error::{Error, Result};
use crate::metrics::{auc, leak_report, LeakReport};
use crate::trainer::{CutRecord, EpochMetrics, GafmConfig};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GAFM_OUT";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Spambase(PathBuf),
    Credit(PathBuf),
    Imdb(PathBuf),
    Synthetic {
        n: usize,
        d: usize,
        separation: f64,
        positive_fraction: f64,
        seed: u64,
    },
}

impl DataSource {
    pub fn name(&self) -> &'static str {
        match self {
            DataSource::Spambase(_) => "spambase",
            DataSource::Credit(_) => "credit",
            DataSource::Imdb(_) => "imdb",
            DataSource::Synthetic { .. } => "synthetic",
        }
    }

    /// Builds a source from a dataset name and an optional path.
    pub fn from_name(name: &str, path: Option<PathBuf>) -> Result<Self> {
        let need_path = |p: Option<PathBuf>| {
            p.ok_or_else(|| Error::InvalidParameter(format!("dataset {name} needs a path")))
        };
        match name.to_ascii_lowercase().as_str() {
            "spambase" => Ok(DataSource::Spambase(need_path(path)?)),
            "credit" => Ok(DataSource::Credit(need_path(path)?)),
            "imdb" => Ok(DataSource::Imdb(need_path(path)?)),
            "synthetic" => Ok(DataSource::Synthetic {
                n: 2000,
                d: 5,
                separation: 2.0,
                positive_fraction: 0.4,
                seed: 0,
            }),
            other => Err(Error::InvalidParameter(format!("unknown dataset {other:?}"))),
        }
    }

    /// Column counts per party used in the multi-party setting.
    pub fn default_split(&self, d: usize, parties: usize) -> Vec<usize> {
        match (self, parties) {
            (DataSource::Imdb(_), 3) if d == IMDB_VOCAB => vec![200, 200, 100],
            _ => even_counts(d, parties),
        }
    }

    fn train_fraction(&self) -> f64 {
        match self {
            DataSource::Imdb(_) => 0.5,
            _ => 0.7,
        }
    }

    pub fn load(&self) -> Result<LoadedData> {
        Ok(match self {
            DataSource::Spambase(p) => LoadedData::Table(load_spambase(p)?),
            DataSource::Credit(p) => LoadedData::Table(load_credit(p)?),
            DataSource::Imdb(p) => LoadedData::Corpus(ImdbCorpus::load(p)?),
            DataSource::Synthetic {
                n,
                d,
                separation,
                positive_fraction,
                seed,
            } => LoadedData::Table(synthetic_gaussian(*n, *d, *separation, *positive_fraction, *seed)?),
        })
    }
}

/// Raw data ready to be split per seed.
#[derive(Debug, Clone)]
pub enum LoadedData {
    Table(Dataset),
    Corpus(ImdbCorpus),
}

#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
}

impl LoadedData {
    pub fn len(&self) -> usize {
        match self {
            LoadedData::Table(d) => d.len(),
            LoadedData::Corpus(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seeded split; tables are standardized with training statistics and the
    /// corpus vocabulary is counted on training reviews.
    pub fn prepare(&self, train_fraction: f64, seed: u64) -> Result<PreparedSplit> {
        let (tr, te) = split_indices(self.len(), SplitSpec::new(train_fraction, seed)?)?;
        match self {
            LoadedData::Table(ds) => {
                let (train, test) = (ds.select(&tr)?, ds.select(&te)?);
                let (ftr, fte) =
                    normalize_features(&train.features, &test.features, Normalization::ZScore)?;
                Ok(PreparedSplit {
                    train: Dataset { features: ftr, ..train },
                    test: Dataset { features: fte, ..test },
                })
            }
            LoadedData::Corpus(c) => {
                let vocab = c.top_words(&tr, IMDB_VOCAB);
                Ok(PreparedSplit {
                    train: c.presence(&tr, &vocab)?,
                    test: c.presence(&te, &vocab)?,
                })
            }
        }
    }

    /// Whole table (or corpus) standardized on itself, for subset procedures.
    pub fn standardized_table(&self) -> Result<Dataset> {
        match self {
            LoadedData::Table(ds) => {
                let (f, _) = normalize_features(&ds.features, &ds.features, Normalization::ZScore)?;
                Ok(Dataset { features: f, ..ds.clone() })
            }
            LoadedData::Corpus(c) => {
                let all: Vec<usize> = (0..c.len()).collect();
                let vocab = c.top_words(&all, IMDB_VOCAB);
                c.presence(&all, &vocab)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub methods: Vec<MethodKind>,
    pub clients: usize,
    pub split: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub outdir: PathBuf,
    pub workers: usize,
    pub train: GafmConfig,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            methods: vec![MethodKind::Gafm, MethodKind::Vanilla, MethodKind::MaxNorm],
            clients: 1,
            split: None,
            seeds: (0..10).collect(),
            outdir: default_out_root(),
            workers: 1,
            train: GafmConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seed list is empty".into()));
        }
        if self.clients == 0 {
            return Err(Error::InvalidParameter("need at least one client".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("method list is empty".into()));
        }
        if let Some(s) = &self.split {
            if s.len() != self.clients {
                return Err(Error::InvalidParameter(format!(
                    "split lists {} parties but clients = {}",
                    s.len(),
                    self.clients
                )));
            }
        }
        self.train.validate()
    }

    /// Applies `key=value` settings. Unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: {v:?} is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: {v:?} is not an integer")))
        };
        let widths = |v: &str| -> Result<Vec<usize>> {
            v.split(',').filter(|w| !w.trim().is_empty()).map(|w| int(w.trim())).collect()
        };
        match key.trim() {
            "dataset" => {
                let path = match &self.source {
                    DataSource::Spambase(p) | DataSource::Credit(p) | DataSource::Imdb(p) => {
                        Some(p.clone())
                    }
                    DataSource::Synthetic { .. } => None,
                };
                self.source = match DataSource::from_name(value, path.clone()) {
                    Ok(s) => s,
                    // path may arrive later in the file
                    Err(_) if path.is_none() => DataSource::from_name(value, Some(PathBuf::new()))?,
                    Err(e) => return Err(e),
                };
            }
            "path" => {
                let p = PathBuf::from(value);
                self.source = match &self.source {
                    DataSource::Spambase(_) => DataSource::Spambase(p),
                    DataSource::Credit(_) => DataSource::Credit(p),
                    DataSource::Imdb(_) => DataSource::Imdb(p),
                    DataSource::Synthetic { .. } => {
                        return Err(Error::InvalidParameter("synthetic data takes no path".into()))
                    }
                };
            }
            "method" | "methods" => {
                self.methods = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(MethodKind::from_str)
                    .collect::<Result<_>>()?;
            }
            "delta" => self.train.delta = num(value)?,
            "sigma" => self.train.sigma = num(value)?,
            "gamma" => self.train.gamma = num(value)?,
            "clip" => self.train.clip = num(value)?,
            "epochs" => self.train.epochs = int(value)?,
            "batch" => self.train.batch_size = int(value)?,
            "lr_d" => self.train.lr_d = num(value)?,
            "lr_g" => self.train.lr_g = num(value)?,
            "lr_l" => self.train.lr_l = num(value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "clients" => self.clients = int(value)?,
            "split" => {
                self.split = Some(value.split(',').map(|s| int(s.trim())).collect::<Result<_>>()?)
            }
            "outdir" => self.outdir = PathBuf::from(value),
            "workers" => self.workers = int(value)?.max(1),
            "local_hidden" => self.train.local_hidden = widths(value)?,
            "generator_hidden" => self.train.generator_hidden = widths(value)?,
            "critic_hidden" => self.train.critic_hidden = widths(value)?,
            "leaky_slope" => self.train.leaky_slope = num(value)?,
            "response" => self.train.response_sampling = value.parse()?,
            "init" => self.train.init = value.parse()?,
            other => {
                return Err(Error::InvalidParameter(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Parses a flat `key=value` file; `#` starts a comment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::new(DataSource::from_name("synthetic", None)?);
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(path, format!("line {}: expected key=value", ln + 1))
            })?;
            cfg.apply(k, v).map_err(|e| Error::parse(path, format!("line {}: {e}", ln + 1)))?;
        }
        Ok(cfg)
    }
}

/// `"0..9"` (inclusive), `"3"`, or `"0,2,5"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidParameter(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect()
}

/// One `(method, seed)` result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub train_auc: f64,
    pub test_auc: f64,
    pub leak_norm: f64,
    pub leak_mean: f64,
    pub leak_median: f64,
    pub tvd: f64,
}

impl RunRow {
    pub const CSV_HEADER: &'static str =
        "method,dataset,seed,train_auc,test_auc,leak_norm,leak_mean,leak_median,tvd";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.dataset,
            self.seed,
            self.train_auc,
            self.test_auc,
            self.leak_norm,
            self.leak_mean,
            self.leak_median,
            self.tvd
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let c: Vec<&str> = line.trim().split(',').collect();
        if c.len() != 9 {
            return Err(Error::InvalidParameter(format!("result row {line:?} has {} fields", c.len())));
        }
        let f = |i: usize| -> Result<f64> {
            c[i].parse()
                .map_err(|_| Error::InvalidParameter(format!("field {i} of {line:?} is not a number")))
        };
        Ok(Self {
            method: c[0].to_string(),
            dataset: c[1].to_string(),
            seed: c[2]
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad seed in {line:?}")))?,
            train_auc: f(3)?,
            test_auc: f(4)?,
            leak_norm: f(5)?,
            leak_mean: f(6)?,
            leak_median: f(7)?,
            tvd: f(8)?,
        })
    }

    fn metrics(&self) -> [f64; 6] {
        [
            self.train_auc,
            self.test_auc,
            self.leak_norm,
            self.leak_mean,
            self.leak_median,
            self.tvd,
        ]
    }
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: RunRow,
    pub leak: LeakReport,
    pub epochs: Vec<EpochMetrics>,
    pub records: Vec<CutRecord>,
}

/// Trains `method` on a prepared split and audits the final-epoch cut gradients.
pub fn run_single(
    label: &str,
    method: MethodKind,
    data: &PreparedSplit,
    counts: &[usize],
    config: &GafmConfig,
) -> Result<RunOutcome> {
    let partition = partition_features(data.train.dim(), counts)?;
    let (model, out) = run_baseline(
        method,
        &data.train.features,
        data.train.labels.clone(),
        &partition,
        config,
    )?;
    let train_auc = auc(&model.predict(&data.train.features)?, &data.train.labels)?;
    let test_auc = auc(&model.predict(&data.test.features)?, &data.test.labels)?;
    let leak = leak_report(&out.records)?;
    Ok(RunOutcome {
        row: RunRow {
            method: label.to_string(),
            dataset: data.train.name.clone(),
            seed: config.seed,
            train_auc,
            test_auc,
            leak_norm: leak.leak_norm,
            leak_mean: leak.leak_mean,
            leak_median: leak.leak_median,
            tvd: leak.tvd,
        },
        leak,
        epochs: out.epochs,
        records: out.records,
    })
}

/// Runs `jobs` on up to `workers` threads, preserving job order in the output.
fn run_parallel<J, T, F>(jobs: Vec<J>, workers: usize, f: F) -> Vec<T>
where
    J: Send,
    T: Send,
    F: Fn(J) -> T + Sync,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop();
                let Some((i, job)) = job else { break };
                let out = f(job);
                results.lock().expect("results lock").push((i, out));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Mean and sample standard deviation of each metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub dataset: String,
    pub runs: usize,
    /// `(mean, sd)` for train AUC, test AUC, norm, mean, median leak AUC, TVD.
    pub cells: [(f64, f64); 6],
}

/// Mean and sample (n - 1) standard deviation; sd is 0 for a single value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups rows by `(method, dataset)` in first-seen order.
pub fn aggregate_rows(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.dataset.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let mut cells = [(0.0, 0.0); 6];
            for (k, cell) in cells.iter_mut().enumerate() {
                let vals: Vec<f64> = g.iter().map(|r| r.metrics()[k]).collect();
                *cell = mean_sd(&vals);
            }
            AggregateRow {
                method: key.0,
                dataset: key.1,
                runs: g.len(),
                cells,
            }
        })
        .collect()
}

/// `0.94±0.01`
pub fn format_cell((mean, sd): (f64, f64)) -> String {
    format!("{mean:.2}±{sd:.2}")
}

pub fn summary_markdown(rows: &[RunRow]) -> String {
    let mut s = String::from(
        "| dataset | method | runs | train | test | norm attack | mean attack | median attack | TVD |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for a in aggregate_rows(rows) {
        let cells: Vec<String> = a.cells.iter().copied().map(format_cell).collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            a.dataset,
            a.method,
            a.runs,
            cells.join(" | ")
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TableResult {
    pub outcomes: Vec<RunOutcome>,
}

impl TableResult {
    pub fn rows(&self) -> Vec<RunRow> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }

    pub fn by_method(&self, label: &str) -> Vec<&RunOutcome> {
        self.outcomes.iter().filter(|o| o.row.method == label).collect()
    }
}

fn counts_for(cfg: &ExperimentConfig, d: usize) -> Result<Vec<usize>> {
    let counts = match &cfg.split {
        Some(s) => s.clone(),
        None => cfg.source.default_split(d, cfg.clients),
    };
    partition_features(d, &counts)?;
    Ok(counts)
}

/// Every method on every seed: a fresh split keyed by the seed, training and audit.
pub fn run_table(cfg: &ExperimentConfig) -> Result<TableResult> {
    let data = cfg.source.load()?;
    run_table_on(cfg, &data)
}

/// [`run_table`] on already loaded data.
pub fn run_table_on(cfg: &ExperimentConfig, data: &LoadedData) -> Result<TableResult> {
    let jobs: Vec<(MethodKind, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    run_jobs(cfg, data, jobs.into_iter().map(|(m, s)| (m.name().to_string(), m, s, cfg.train.clone())).collect())
}

fn run_jobs(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    jobs: Vec<(String, MethodKind, u64, GafmConfig)>,
) -> Result<TableResult> {
    cfg.validate()?;
    let frac = cfg.source.train_fraction();
    let outcomes = run_parallel(jobs, cfg.workers, |(label, method, seed, train)| {
        let split = data.prepare(frac, seed)?;
        let counts = counts_for(cfg, split.train.dim())?;
        let config = GafmConfig { seed, ..train };
        run_single(&label, method, &split, &counts, &config).map_err(|e| match e {
            Error::Diverged { epoch, batch, message } => Error::Diverged {
                epoch,
                batch,
                message: format!("{label} seed {seed}: {message}"),
            },
            other => other,
        })
    });
    Ok(TableResult {
        outcomes: outcomes.into_iter().collect::<Result<_>>()?,
    })
}

/// GAFM with each noise scale in `sigmas`; rows are labelled `gafm(<sigma>)`.
pub fn sigma_sweep(cfg: &ExperimentConfig, sigmas: &[f64]) -> Result<TableResult> {
    let data = cfg.source.load()?;
    let mut jobs = Vec::new();
    for &sigma in sigmas {
        for &seed in &cfg.seeds {
            let train = GafmConfig { sigma, ..cfg.train.clone() };
            jobs.push((format!("gafm({sigma})"), MethodKind::Gafm, seed, train));
        }
    }
    run_jobs(cfg, &data, jobs)
}

/// Multi-party run with averaging aggregation.
pub fn run_multiclient(cfg: &ExperimentConfig, clients: usize) -> Result<TableResult> {
    let cfg = ExperimentConfig {
        clients,
        ..cfg.clone()
    };
    run_table(&cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSelection {
    pub grid: Vec<f64>,
    pub subsample_fraction: f64,
    pub reps: usize,
    pub tau: f64,
    /// Mean of leak AUC / train AUC over reps and the three attacks, per grid value.
    pub ratios: Vec<f64>,
    pub train_aucs: Vec<f64>,
    pub chosen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSearch {
    pub grid: Vec<f64>,
    pub subsample_fraction: f64,
    pub reps: usize,
    pub tau: f64,
    /// Seeds the subsample; rep `r` trains with seed `seed * 1000 + r`.
    pub seed: u64,
}

impl Default for DeltaSearch {
    fn default() -> Self {
        Self {
            grid: vec![0.05, 0.1, 0.2, 0.3, 0.5],
            subsample_fraction: 0.1,
            reps: 5,
            tau: 0.6,
            seed: 0,
        }
    }
}

/// Lowest-ratio grid value whose mean training AUC reaches `tau`; ties go to the smaller delta.
pub fn choose_delta(grid: &[f64], ratios: &[f64], train_aucs: &[f64], tau: f64) -> Result<f64> {
    grid.iter()
        .zip(ratios)
        .zip(train_aucs)
        .filter(|(_, &a)| a >= tau)
        .min_by(|((d1, r1), _), ((d2, r2), _)| {
            r1.partial_cmp(r2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(d1.partial_cmp(d2).unwrap_or(std::cmp::Ordering::Equal))
        })
        .map(|((&d, _), _)| d)
        .ok_or(Error::NoFeasibleDelta { tau })
}

/// Picks delta by training GAFM on a small subsample for each grid value.
pub fn select_delta(
    data: &LoadedData,
    search: &DeltaSearch,
    base: &GafmConfig,
    workers: usize,
) -> Result<DeltaSelection> {
    if search.grid.is_empty() {
        return Err(Error::InvalidParameter("delta grid is empty".into()));
    }
    if let Some(d) = search.grid.iter().find(|d| !(0.0..=0.5).contains(*d)) {
        return Err(Error::InvalidParameter(format!("delta {d} outside [0, 0.5]")));
    }
    if search.reps == 0 {
        return Err(Error::InvalidParameter("need at least one repetition".into()));
    }
    let subset = data.standardized_table()?.subsample(search.subsample_fraction, search.seed)?;
    let counts = vec![subset.dim()];
    let split = PreparedSplit {
        train: subset.clone(),
        test: subset,
    };
    let jobs: Vec<(usize, u64)> = (0..search.grid.len())
        .flat_map(|g| (0..search.reps as u64).map(move |r| (g, r)))
        .collect();
    let results = run_parallel(jobs, workers, |(g, r)| {
        let config = GafmConfig {
            delta: search.grid[g],
            seed: search.seed * 1000 + r,
            ..base.clone()
        };
        run_single("gafm", MethodKind::Gafm, &split, &counts, &config).map(|o| (g, o.row))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut ratios = vec![0.0; search.grid.len()];
    let mut train_aucs = vec![0.0; search.grid.len()];
    let per = search.reps as f64;
    for (g, row) in &results {
        let attacks = [row.leak_norm, row.leak_mean, row.leak_median];
        ratios[*g] += attacks.iter().map(|a| a / row.train_auc).sum::<f64>() / (3.0 * per);
        train_aucs[*g] += row.train_auc / per;
    }
    let chosen = choose_delta(&search.grid, &ratios, &train_aucs, search.tau)?;
    Ok(DeltaSelection {
        grid: search.grid.clone(),
        subsample_fraction: search.subsample_fraction,
        reps: search.reps,
        tau: search.tau,
        ratios,
        train_aucs,
        chosen,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn results_csv(rows: &[RunRow]) -> String {
    let mut s = String::from(RunRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_results_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RunRow::CSV_HEADER => {}
        _ => return Err(Error::InvalidParameter("results file has the wrong header".into())),
    }
    lines.filter(|l| !l.trim().is_empty()).map(RunRow::from_csv).collect()
}

pub const CUT_RECORDS_HEADER: &str = "index\tlabel\ty_tilde\ty_hat\tgrad_total\tgrad_gan\tgrad_penalty";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn record_line(r: &CutRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.index,
        r.label,
        r.y_tilde,
        r.y_hat,
        r.grad_total,
        opt(r.grad_gan),
        opt(r.grad_penalty)
    )
}

/// Per-run `cut_records.tsv`.
pub fn cut_records_tsv(records: &[CutRecord]) -> String {
    let mut s = String::from(CUT_RECORDS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&record_line(r));
        s.push('\n');
    }
    s
}

/// Per-run `metrics.csv`.
pub fn metrics_csv(epochs: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_auc,cut_auc,mean_prediction,gan_loss,penalty_loss\n");
    for e in epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.epoch, e.train_auc, e.cut_auc, e.mean_prediction, e.gan_loss, e.penalty_loss
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakReportEntry {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub leak_norm: f64,
    pub leak_mean: f64,
    pub leak_median: f64,
    pub tvd: f64,
    pub sym_kl: f64,
    pub bound: f64,
    pub direction_flag: Option<bool>,
}

impl LeakReportEntry {
    pub fn from_outcome(o: &RunOutcome) -> Self {
        Self {
            method: o.row.method.clone(),
            dataset: o.row.dataset.clone(),
            seed: o.row.seed,
            leak_norm: o.leak.leak_norm,
            leak_mean: o.leak.leak_mean,
            leak_median: o.leak.leak_median,
            tvd: o.leak.tvd,
            sym_kl: o.leak.sym_kl,
            bound: o.leak.bound,
            direction_flag: o.leak.direction.as_ref().map(|d| d.opposite),
        }
    }
}

/// Writes `results.csv`, `summary.md`, `cut_records.tsv`, `leak_report.json`
/// and a `runs/<method>_seed<k>/` directory per run.
pub fn emit_reports(outcomes: &[RunOutcome], outdir: &Path) -> Result<()> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let rows: Vec<RunRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    write(&outdir.join("results.csv"), &results_csv(&rows))?;
    write(&outdir.join("summary.md"), &summary_markdown(&rows))?;

    let mut all = format!("method\tseed\t{CUT_RECORDS_HEADER}\n");
    for o in outcomes {
        for r in &o.records {
            let _ = writeln!(all, "{}\t{}\t{}", o.row.method, o.row.seed, record_line(r));
        }
    }
    write(&outdir.join("cut_records.tsv"), &all)?;

    let entries: Vec<LeakReportEntry> = outcomes.iter().map(LeakReportEntry::from_outcome).collect();
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::InvalidParameter(format!("leak report serialization: {e}")))?;
    write(&outdir.join("leak_report.json"), &json)?;

    for o in outcomes {
        let dir = outdir.join("runs").join(format!("{}_seed{}", o.row.method, o.row.seed));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("metrics.csv"), &metrics_csv(&o.epochs))?;
        write(&dir.join("cut_records.tsv"), &cut_records_tsv(&o.records))?;
    }
    Ok(())
}
