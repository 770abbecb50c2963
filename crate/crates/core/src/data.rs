//! Tabular regression data: CSV ingestion, the seeded 70/20/10 split, z-score
//! standardization fitted on the training rows, and synthetic fixtures.

use std::fs::File;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{reference_solve, FhnParams, FitzHughNagumo};
use crate::tensor::Tensor;

/// Feature columns of the California Housing export, in file order.
pub const CALIFORNIA_FEATURES: [&str; 8] = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
];

/// Median house value in units of $100,000.
pub const CALIFORNIA_TARGET: &str = "MedHouseVal";

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.2, 0.1];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data file not found: {0}")]
    FileNotFound(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error on line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("no usable rows in {0}")]
    Empty(String),
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    BadFractions([f64; 3]),
    #[error("standardizer fitted on row {0}, which is not a training row")]
    Leakage(usize),
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Expected CSV header: feature names followed by the target name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    pub target: String,
}

impl Schema {
    pub fn california() -> Self {
        Self {
            features: CALIFORNIA_FEATURES.iter().map(|s| s.to_string()).collect(),
            target: CALIFORNIA_TARGET.to_string(),
        }
    }

    fn header(&self) -> Vec<&str> {
        self.features
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.target.as_str()))
            .collect()
    }
}

/// `N x n` features (row-major) and `N` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    feature_names: Vec<String>,
    target_name: String,
    features: Vec<f64>,
    targets: Vec<f64>,
    /// 1-based file lines dropped during ingestion.
    rejected_lines: Vec<u64>,
}

impl RawTable {
    pub fn new(
        feature_names: Vec<String>,
        target_name: String,
        features: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = feature_names.len();
        if n == 0 || targets.is_empty() {
            return Err(DataError::Empty("table".into()));
        }
        if features.len() != n * targets.len() {
            return Err(DataError::SchemaMismatch(format!(
                "{} feature values for {} rows of {} columns",
                features.len(),
                targets.len(),
                n
            )));
        }
        Ok(Self {
            feature_names,
            target_name,
            features,
            targets,
            rejected_lines: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_features();
        &self.features[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn rejected_lines(&self) -> &[u64] {
        &self.rejected_lines
    }

    /// Write the table back out with its header, e.g. to ship a sample.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), DataError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        writer.write_record(&header).map_err(csv_to_io)?;
        for i in 0..self.rows() {
            let mut record: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            record.push(self.targets[i].to_string());
            writer.write_record(&record).map_err(csv_to_io)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_to_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Read a comma-separated file whose header equals `schema`. Rows with a
/// wrong field count or a missing, unparsable or non-finite value are
/// dropped with a warning naming their line.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.display().to_string()),
        _ => DataError::Io(e),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(DataError::SchemaMismatch(format!(
                "{} is empty",
                path.display()
            )))
        }
        Some(r) => r.map_err(|e| parse_error(&e))?,
    };
    let expected = schema.header();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(DataError::SchemaMismatch(format!(
            "header {:?}, expected {:?}",
            got, expected
        )));
    }

    let n = schema.features.len();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut rejected = Vec::new();
    for record in records {
        let record = record.map_err(|e| parse_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parsed: Option<Vec<f64>> = if record.len() == n + 1 {
            record
                .iter()
                .map(|field| field.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        } else {
            None
        };
        match parsed {
            Some(values) => {
                features.extend_from_slice(&values[..n]);
                targets.push(values[n]);
            }
            None => {
                warn!("{}: rejected malformed row on line {line}", path.display());
                rejected.push(line);
            }
        }
    }
    if targets.is_empty() {
        return Err(DataError::Empty(path.display().to_string()));
    }
    if !rejected.is_empty() {
        warn!(
            "{}: kept {} rows, rejected {}",
            path.display(),
            targets.len(),
            rejected.len()
        );
    }
    let mut table = RawTable::new(
        schema.features.clone(),
        schema.target.clone(),
        features,
        targets,
    )?;
    table.rejected_lines = rejected;
    Ok(table)
}

fn parse_error(e: &csv::Error) -> DataError {
    DataError::ParseError {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Seeded uniform shuffle of `0..rows`, then contiguous train/validation/test
/// slices. Validation and test get `floor(f * rows)` rows; train takes the rest.
pub fn split(rows: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices, DataError> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(fractions));
    }
    // The small slack keeps products like 0.1 * 20640 from flooring one low.
    let take = |f: f64| ((f * rows as f64) + 1e-9).floor() as usize;
    let n_val = take(fractions[1]);
    let n_test = take(fractions[2]);
    let n_train = rows - n_val - n_test;

    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        validation,
        test,
        seed,
    })
}

/// Per-column z-score statistics (population standard deviation), for the
/// features and the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Which rows a standardizer may be fitted on.
#[derive(Debug, Clone, Copy)]
pub enum FitGuard<'a> {
    /// Every fitted row must belong to this split's training part.
    Strict(&'a SplitIndices),
    Permissive,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let m = values.clone().sum::<f64>() / count as f64;
    let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
    (m, var.sqrt())
}

fn guarded(std: f64, what: &str) -> f64 {
    if std > 0.0 {
        std
    } else {
        warn!("{what} has zero variance on the fitting rows; using scale 1");
        1.0
    }
}

impl Standardizer {
    pub fn fit(table: &RawTable, rows: &[usize], guard: FitGuard<'_>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty("standardizer fitting rows".into()));
        }
        for &r in rows {
            if r >= table.rows() {
                return Err(DataError::RowOutOfRange {
                    index: r,
                    rows: table.rows(),
                });
            }
        }
        if let FitGuard::Strict(split) = guard {
            let mut is_train = vec![false; table.rows()];
            for &r in &split.train {
                if r < is_train.len() {
                    is_train[r] = true;
                }
            }
            if let Some(&bad) = rows.iter().find(|&&r| !is_train[r]) {
                return Err(DataError::Leakage(bad));
            }
        }
        let count = rows.len();
        let mut feature_mean = Vec::with_capacity(table.n_features());
        let mut feature_std = Vec::with_capacity(table.n_features());
        for j in 0..table.n_features() {
            let (m, s) = mean_std(rows.iter().map(|&r| table.row(r)[j]), count);
            feature_mean.push(m);
            feature_std.push(guarded(s, &table.feature_names()[j]));
        }
        let (target_mean, s) = mean_std(rows.iter().map(|&r| table.target(r)), count);
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std: guarded(s, table.target_name()),
        })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn transform_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn inverse_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    /// Standardized features of `rows` as an `n x rows.len()` tensor (one
    /// sample per column) and their standardized targets as `1 x rows.len()`.
    pub fn apply(&self, table: &RawTable, rows: &[usize]) -> SplitData {
        let n = table.n_features();
        let m = rows.len();
        let mut x = Tensor::zeros(n, m);
        let mut y = Tensor::zeros(1, m);
        for (col, &r) in rows.iter().enumerate() {
            for (j, z) in self.transform_row(table.row(r)).into_iter().enumerate() {
                x.set(j, col, z);
            }
            y.set(0, col, self.transform_target(table.target(r)));
        }
        SplitData { x, y }
    }
}

/// One standardized split, column-batched.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub x: Tensor,
    pub y: Tensor,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.y.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.rows()
    }

    /// The samples at `cols`, in that order.
    pub fn gather(&self, cols: &[usize]) -> SplitData {
        let n = self.n_features();
        SplitData {
            x: Tensor::from_fn(n, cols.len(), |i, j| self.x.get(i, cols[j])),
            y: Tensor::from_fn(1, cols.len(), |_, j| self.y.get(0, cols[j])),
        }
    }
}

/// A table split and standardized on its training rows; immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: SplitIndices,
    pub standardizer: Standardizer,
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
}

impl Dataset {
    pub fn prepare(table: &RawTable, fractions: [f64; 3], seed: u64) -> Result<Self, DataError> {
        let split = split(table.rows(), fractions, seed)?;
        let standardizer = Standardizer::fit(table, &split.train, FitGuard::Strict(&split))?;
        Ok(Self {
            train: standardizer.apply(table, &split.train),
            validation: standardizer.apply(table, &split.validation),
            test: standardizer.apply(table, &split.test),
            split,
            standardizer,
        })
    }

    pub fn n_features(&self) -> usize {
        self.train.n_features()
    }

    pub fn part(&self, which: SplitName) -> &SplitData {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// `y = w . x + noise` with `x ~ N(0, I)`.
    Linear,
    /// `y` is the `v` coordinate of a FitzHugh–Nagumo unit started at
    /// `(0.5 tanh(w . x) + 0.2, 0)` and run to `t = 50`, plus noise.
    Fhn,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub table: RawTable,
    /// The generating weights `w`.
    pub weights: Vec<f64>,
}

pub fn synthetic_dataset(
    kind: SyntheticKind,
    rows: usize,
    n: usize,
    noise: f64,
    seed: u64,
) -> Synthetic {
    let rows = rows.max(1);
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fhn = FitzHughNagumo::new(1, FhnParams::default());
    let mut features = Vec::with_capacity(rows * n);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let dot: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
        let clean = match kind {
            SyntheticKind::Linear => dot,
            SyntheticKind::Fhn => {
                let v0 = 0.5 * dot.tanh() + 0.2;
                reference_solve(&[v0, 0.0], &fhn, 50.0, 0.05).expect("bounded FHN orbit")[0]
            }
        };
        let eps: f64 = rng.sample(StandardNormal);
        features.extend(x);
        targets.push(clean + noise * eps);
    }
    let names = (1..=n).map(|j| format!("x_{j}")).collect();
    Synthetic {
        table: RawTable::new(names, "y".into(), features, targets).expect("consistent shapes"),
        weights,
    }
}
