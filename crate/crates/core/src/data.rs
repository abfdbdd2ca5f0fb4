//! Dataset ingestion, preprocessing and feature partitioning.
//!
//! Loaders only impute missing values; standardization happens after the
//! train/test split so test statistics never reach the training data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Feature count of the Spambase table.
pub const SPAMBASE_FEATURES: usize = 57;
/// Vocabulary size of the IMDB presence features.
pub const IMDB_VOCAB: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidParameter(format!("label {l} is not 0/1")));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            features: self.features.select_rows(rows)?,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Random subset of `fraction` of the rows, drawn without replacement.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "subsample fraction {fraction} outside (0, 1]"
            )));
        }
        let k = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(k);
        idx.sort_unstable();
        self.select(&idx)
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "?")
}

fn parse_label(cell: &str, path: &Path, line: usize) -> Result<u8> {
    match cell.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(Error::parse(
            path,
            format!("line {line}: label {cell:?} is not 0/1"),
        )),
    }
}

/// Spambase: 57 numeric columns then a 0/1 label, comma separated, no header.
/// Missing cells become 0.
pub fn load_spambase(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != SPAMBASE_FEATURES + 1 {
            return Err(Error::parse(
                path,
                format!(
                    "line {}: expected {} columns, found {}",
                    ln + 1,
                    SPAMBASE_FEATURES + 1,
                    cells.len()
                ),
            ));
        }
        for cell in &cells[..SPAMBASE_FEATURES] {
            if is_missing(cell) {
                data.push(0.0);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, format!("line {}: non-numeric cell {cell:?}", ln + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("line {}: non-finite cell", ln + 1)));
            }
            data.push(v);
        }
        labels.push(parse_label(cells[SPAMBASE_FEATURES], path, ln + 1)?);
    }
    let n = labels.len();
    Dataset::new("spambase", Matrix::new(n, SPAMBASE_FEATURES, data)?, labels)
}

/// Credit default table: header row, an `ID` column (dropped), label last.
///
/// Columns whose non-missing cells all parse as numbers are real-valued and
/// impute 0. Any other column is categorical: missing cells become the empty
/// category and categories are integer-coded in sorted order.
pub fn load_credit(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::parse(path, "missing header row"))?
        .split(',')
        .map(|h| h.trim().trim_matches('"').to_string())
        .collect();
    if header.len() < 2 || header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::parse(path, "missing header row"));
    }
    let label_col = header.len() - 1;
    let keep: Vec<usize> = (0..label_col)
        .filter(|&j| !header[j].eq_ignore_ascii_case("id"))
        .collect();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<String> = line
            .split(',')
            .map(|c| c.trim().trim_matches('"').to_string())
            .collect();
        if cells.len() != header.len() {
            return Err(Error::parse(
                path,
                format!(
                    "line {}: expected {} columns, found {}",
                    ln + 2,
                    header.len(),
                    cells.len()
                ),
            ));
        }
        rows.push(cells);
    }

    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        labels.push(parse_label(&r[label_col], path, i + 2)?);
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(keep.len());
    for &j in &keep {
        let numeric = rows
            .iter()
            .all(|r| is_missing(&r[j]) || r[j].parse::<f64>().is_ok_and(f64::is_finite));
        if numeric {
            columns.push(
                rows.iter()
                    .map(|r| if is_missing(&r[j]) { 0.0 } else { r[j].parse().unwrap_or(0.0) })
                    .collect(),
            );
        } else {
            let category = |c: &str| if is_missing(c) { String::new() } else { c.to_string() };
            let levels: BTreeSet<String> = rows.iter().map(|r| category(&r[j])).collect();
            let code: HashMap<&str, f64> = levels
                .iter()
                .enumerate()
                .map(|(k, s)| (s.as_str(), k as f64))
                .collect();
            columns.push(rows.iter().map(|r| code[category(&r[j]).as_str()]).collect());
        }
    }
    let n = rows.len();
    let d = columns.len();
    let features = Matrix::from_fn(n, d, |i, j| columns[j][i]);
    Dataset::new("credit", features, labels)
}

/// Tokenized IMDB reviews: one `label<TAB>idx idx ...` line per review.
#[derive(Debug, Clone, PartialEq)]
pub struct ImdbCorpus {
    pub reviews: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
}

impl ImdbCorpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let mut reviews = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, seq) = line.split_once('\t').ok_or_else(|| {
                Error::parse(path, format!("line {}: expected label<TAB>indices", ln + 1))
            })?;
            labels.push(parse_label(label.trim(), path, ln + 1)?);
            let words = seq
                .split_whitespace()
                .map(|w| {
                    w.parse::<u32>().map_err(|_| {
                        Error::parse(path, format!("line {}: bad word index {w:?}", ln + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            reviews.push(words);
        }
        Ok(Self { reviews, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `k` most frequent word indices over `rows`; ties go to the smaller index.
    pub fn top_words(&self, rows: &[usize], k: usize) -> Vec<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &r in rows {
            for &w in &self.reviews[r] {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(k).map(|(w, _)| w).collect()
    }

    /// Binary presence matrix over `vocab` for the given rows.
    pub fn presence(&self, rows: &[usize], vocab: &[u32]) -> Result<Dataset> {
        let column: HashMap<u32, usize> = vocab.iter().enumerate().map(|(j, &w)| (w, j)).collect();
        let mut features = Matrix::zeros(rows.len(), vocab.len());
        for (i, &r) in rows.iter().enumerate() {
            for w in &self.reviews[r] {
                if let Some(&j) = column.get(w) {
                    features.set(i, j, 1.0);
                }
            }
        }
        Dataset::new("imdb", features, rows.iter().map(|&r| self.labels[r]).collect())
    }
}

/// Whole-corpus presence dataset over the top [`IMDB_VOCAB`] words.
///
/// Experiments use [`ImdbCorpus`] directly so the vocabulary is counted on
/// training reviews only.
pub fn load_imdb(path: impl AsRef<Path>) -> Result<Dataset> {
    let corpus = ImdbCorpus::load(path)?;
    let all: Vec<usize> = (0..corpus.len()).collect();
    let vocab = corpus.top_words(&all, IMDB_VOCAB);
    corpus.presence(&all, &vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Normalization {
    #[default]
    ZScore,
    MinMax,
}

/// Standardizes both splits with statistics of the training split.
///
/// Z-score uses the population standard deviation. Constant training
/// columns map to zero in both splits.
pub fn normalize_features(
    train: &Matrix<f64>,
    test: &Matrix<f64>,
    kind: Normalization,
) -> Result<(Matrix<f64>, Matrix<f64>)> {
    if train.rows() == 0 {
        return Err(Error::InvalidParameter("empty training split".into()));
    }
    if test.cols() != train.cols() {
        return Err(Error::Shape("train and test have different widths".into()));
    }
    let n = train.rows() as f64;
    let stats: Vec<(f64, f64)> = (0..train.cols())
        .map(|j| {
            let col = train.col(j);
            match kind {
                Normalization::ZScore => {
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
                Normalization::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
            }
        })
        .collect();
    let apply = |m: &Matrix<f64>| {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            let (shift, scale) = stats[j];
            if scale > 1e-12 {
                (m.get(i, j) - shift) / scale
            } else {
                0.0
            }
        })
    };
    Ok((apply(train), apply(test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        Ok(Self {
            train_fraction,
            seed,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Seeded shuffle of `0..n`, cut into sorted train and test index lists.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("cannot split {n} rows")));
    }
    let n_train = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

pub fn train_test_split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), spec)?;
    Ok((ds.select(&train)?, ds.select(&test)?))
}

/// Feature columns owned by each passive party.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePartition {
    pub parties: Vec<Vec<usize>>,
}

impl FeaturePartition {
    pub fn num_parties(&self) -> usize {
        self.parties.len()
    }

    pub fn dim(&self) -> usize {
        self.parties.iter().map(Vec::len).sum()
    }
}

/// Contiguous column blocks of the listed sizes, in order.
pub fn partition_features(d: usize, counts: &[usize]) -> Result<FeaturePartition> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidParameter(
            "every party needs at least one column".into(),
        ));
    }
    let total: usize = counts.iter().sum();
    if total != d {
        return Err(Error::InvalidParameter(format!(
            "party column counts sum to {total}, dataset has {d} columns"
        )));
    }
    let mut start = 0;
    let parties = counts
        .iter()
        .map(|&c| {
            let block = (start..start + c).collect();
            start += c;
            block
        })
        .collect();
    Ok(FeaturePartition { parties })
}

/// Near-even split of `d` columns over `parties`, earlier parties taking the remainder.
pub fn even_counts(d: usize, parties: usize) -> Vec<usize> {
    (0..parties)
        .map(|p| d / parties + usize::from(p < d % parties))
        .collect()
}

/// Class-conditional unit Gaussians whose means sit `separation` apart
/// along the all-ones direction. Positives are assigned by exact quota.
pub fn synthetic_gaussian(
    n: usize,
    d: usize,
    separation: f64,
    positive_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs n >= 2 and d >= 1, got n={n}, d={d}"
        )));
    }
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "positive fraction {positive_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n as f64 * positive_fraction).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    let shift = separation / (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z + if l == 1 { shift } else { 0.0 });
        }
    }
    Dataset::new("synthetic", Matrix::new(n, d, data)?, labels)
}
