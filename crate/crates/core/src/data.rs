//! Tabular datasets: CSV ingestion, seeded splits, scaling and manifests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Task;
use crate::scaler::ScalerParams;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },
    #[error("line {line}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("target column '{name}' not found; columns are {available:?}")]
    MissingTarget { name: String, available: Vec<String> },
    #[error("file has a header but no data rows")]
    Empty,
    #[error("classification targets must take two values, found {0:?}")]
    BadLabels(Vec<f64>),
    #[error("split needs {requested} rows but the dataset has {available}")]
    CountsExceed { requested: usize, available: usize },
    #[error("expected {expected} rows, file has {found}")]
    RowCount { expected: usize, found: usize },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// A parsed table: one numeric feature vector and target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl RawTable {
    pub fn num_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Maps the two distinct label values to 0 and 1 (smaller to 0).
fn coerce_labels(targets: &mut [f64]) -> Result<(), DataError> {
    let mut values: Vec<f64> = targets.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.iter().all(|&v| v == 0.0 || v == 1.0) {
        return Ok(());
    }
    if values.len() != 2 {
        return Err(DataError::BadLabels(values));
    }
    let lo = values[0];
    targets.iter_mut().for_each(|t| *t = if *t == lo { 0.0 } else { 1.0 });
    Ok(())
}

/// Parses comma-separated text with a header row. Every column other than
/// `target_column` becomes a feature.
pub fn parse_csv<R: Read>(reader: R, target_column: &str, task: Task) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget {
            name: target_column.to_string(),
            available: header.clone(),
        })?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DataError::Ragged {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::NonNumeric {
                    line,
                    column: header[j].clone(),
                    value: cell.to_string(),
                })?;
            if j == target_idx {
                targets.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if targets.is_empty() {
        return Err(DataError::Empty);
    }
    if task == Task::Classification {
        coerce_labels(&mut targets)?;
    }
    let mut feature_names = header;
    let target_name = feature_names.remove(target_idx);
    Ok(RawTable {
        feature_names,
        target_name,
        features,
        targets,
    })
}

pub fn load_csv(path: &Path, target_column: &str, task: Task) -> Result<RawTable, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file, target_column, task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Disjoint row-index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..num_rows` with `seed` and takes the requested counts in
/// order train, validation, test. Rows beyond the total are unused.
pub fn split(num_rows: usize, counts: SplitCounts, seed: u64) -> Result<Split, DataError> {
    if counts.total() > num_rows {
        return Err(DataError::CountsExceed {
            requested: counts.total(),
            available: num_rows,
        });
    }
    let mut idx: Vec<usize> = (0..num_rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = idx.split_at(counts.train);
    let (val, rest) = rest.split_at(counts.val);
    Ok(Split {
        train: train.to_vec(),
        val: val.to_vec(),
        test: rest[..counts.test].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// A table with one split and a scaler fitted on its training rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub table: RawTable,
    pub task: Task,
    pub split: Split,
    pub scaler: ScalerParams,
    /// Features that were constant on the training rows.
    pub widened: Vec<usize>,
}

impl Dataset {
    pub fn new(table: RawTable, task: Task, counts: SplitCounts, seed: u64, eps: f64) -> Result<Self, DataError> {
        let split = split(table.num_rows(), counts, seed)?;
        let train_rows: Vec<&[f64]> = split.train.iter().map(|&i| table.features[i].as_slice()).collect();
        let (scaler, widened) = if train_rows.is_empty() {
            let n = table.num_features();
            (
                ScalerParams {
                    min: vec![0.0; n],
                    max: vec![1.0; n],
                    eps,
                },
                Vec::new(),
            )
        } else {
            ScalerParams::fit(&train_rows, eps)
        };
        Ok(Dataset {
            table,
            task,
            split,
            scaler,
            widened,
        })
    }

    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.split.train,
            Part::Val => &self.split.val,
            Part::Test => &self.split.test,
        }
    }

    /// Scaled (and clamped) features of one part.
    pub fn inputs(&self, part: Part) -> Vec<Vec<f64>> {
        self.indices(part)
            .iter()
            .map(|&i| self.scaler.apply(&self.table.features[i]))
            .collect()
    }

    pub fn targets(&self, part: Part) -> Vec<f64> {
        self.indices(part).iter().map(|&i| self.table.targets[i]).collect()
    }

    /// Per-feature mean of the scaled training inputs.
    pub fn train_means(&self) -> Vec<f64> {
        let x = self.inputs(Part::Train);
        let n = self.table.num_features();
        let mut means = vec![0.0; n];
        for row in &x {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let count = x.len().max(1) as f64;
        means.iter_mut().for_each(|m| *m /= count);
        if x.is_empty() {
            means.iter_mut().for_each(|m| *m = f64::NAN);
        }
        means
    }
}

/// Pins one dataset's file, target, task, split sizes and split seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Relative paths are resolved against the manifest's directory.
    pub csv_path: PathBuf,
    pub target_column: String,
    pub task: Task,
    pub counts: SplitCounts,
    pub seeds: Vec<u64>,
    /// Row count the file must have, if set.
    #[serde(default)]
    pub expected_rows: Option<usize>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.seeds.is_empty() {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                message: "at least one split seed is required".into(),
            });
        }
        if m.csv_path.is_relative() {
            if let Some(dir) = path.parent() {
                m.csv_path = dir.join(&m.csv_path);
            }
        }
        Ok(m)
    }

    pub fn load_table(&self) -> Result<RawTable, DataError> {
        let table = load_csv(&self.csv_path, &self.target_column, self.task)?;
        if let Some(expected) = self.expected_rows {
            if table.num_rows() != expected {
                return Err(DataError::RowCount {
                    expected,
                    found: table.num_rows(),
                });
            }
        }
        Ok(table)
    }

    pub fn dataset(&self, table: &RawTable, seed: u64, eps: f64) -> Result<Dataset, DataError> {
        Dataset::new(table.clone(), self.task, self.counts, seed, eps)
    }
}
