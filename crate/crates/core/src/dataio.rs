//! Tabular dataset ingestion, categorical encoding and seeded partitioning.
//!
//! Shuffling for [`split`] uses SplitMix64 (Steele, Lea and Flood 2014) with a
//! Fisher-Yates pass that draws the swap index as `(next_u64() * (i + 1)) >> 64`
//! (a 128-bit multiply-high). Any implementation following those two rules
//! reproduces the same partitions for the same seed.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("line {line} has {found} fields, header has {expected}")]
    InconsistentColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("need at least {needed} rows to fill every partition, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("invalid split specification: {0}")]
    InvalidSplit(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How a column entered the numeric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Ordinal codes `1..=categories.len()` in first-appearance order.
    Categorical {
        categories: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
        }
    }
}

/// Dense numeric rows with optional class labels.
///
/// Labels are 0-based class indices; `class_names[c]` holds the original token.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    features: Vec<FeatureMeta>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        features: Vec<FeatureMeta>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let p = features.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::Invalid(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!(
                    "row {i} has a non-finite value"
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != rows.len() {
                return Err(DataError::Invalid(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    rows.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&c| c >= class_names.len()) {
                return Err(DataError::Invalid(format!(
                    "label {bad} outside 0..{}",
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            rows,
            labels,
            features,
            class_names,
        })
    }

    /// Continuous features named `x0, x1, ...` and classes named `0, 1, ...`.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        let p = rows.first().map_or(0, Vec::len);
        let features = (0..p)
            .map(|j| FeatureMeta::continuous(format!("x{j}")))
            .collect();
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        Self::new(rows, labels, features, class_names)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Original category token for an ordinal code, if `feature` is categorical.
    pub fn decode_category(&self, feature: usize, code: f64) -> Option<&str> {
        match &self.features.get(feature)?.kind {
            FeatureKind::Categorical { categories } => {
                if code.fract() != 0.0 || code < 1.0 {
                    return None;
                }
                categories.get(code as usize - 1).map(String::as_str)
            }
            FeatureKind::Continuous => None,
        }
    }

    /// Rows at `indices`, in that order, sharing this dataset's metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            features: self.features.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok()
}

/// Reads a headed CSV file. Columns whose every cell parses as a finite number
/// are continuous; all others are ordinal-encoded by first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    label_column: Option<&str>,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let width = header.len();

    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.to_string()))?,
        ),
        None => None,
    };

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != width {
            return Err(DataError::InconsistentColumnCount {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let row: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(DataError::Parse {
                    line,
                    column: header[j].clone(),
                    message: "missing value".into(),
                });
            }
            if let Some(v) = parse_number(cell) {
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        line,
                        column: header[j].clone(),
                        message: format!("non-finite value '{cell}'"),
                    });
                }
            }
        }
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let feature_cols: Vec<usize> = (0..width).filter(|&j| Some(j) != label_idx).collect();
    let mut features = Vec::with_capacity(feature_cols.len());
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(feature_cols.len());
    for &j in &feature_cols {
        let numeric: Option<Vec<f64>> = cells.iter().map(|r| parse_number(&r[j])).collect();
        match numeric {
            Some(values) => {
                features.push(FeatureMeta::continuous(header[j].clone()));
                columns.push(values);
            }
            None => {
                let mut codes: HashMap<&str, usize> = HashMap::new();
                let mut categories = Vec::new();
                let mut values = Vec::with_capacity(cells.len());
                for r in &cells {
                    let token = r[j].as_str();
                    let code = *codes.entry(token).or_insert_with(|| {
                        categories.push(token.to_string());
                        categories.len()
                    });
                    values.push(code as f64);
                }
                features.push(FeatureMeta {
                    name: header[j].clone(),
                    kind: FeatureKind::Categorical { categories },
                });
                columns.push(values);
            }
        }
    }

    let rows: Vec<Vec<f64>> = (0..cells.len())
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();

    let (labels, class_names) = match label_idx {
        Some(l) => {
            let tokens: Vec<&str> = cells.iter().map(|r| r[l].as_str()).collect();
            let class_names = sorted_distinct(&tokens);
            let index: HashMap<&str, usize> = class_names
                .iter()
                .enumerate()
                .map(|(c, name)| (name.as_str(), c))
                .collect();
            let labels = tokens.iter().map(|t| index[t]).collect();
            (Some(labels), class_names)
        }
        None => (None, Vec::new()),
    };

    Dataset::new(rows, labels, features, class_names)
}

/// Distinct tokens sorted numerically when all are numbers, lexicographically otherwise.
fn sorted_distinct(tokens: &[&str]) -> Vec<String> {
    let mut distinct: Vec<&str> = tokens.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|t| parse_number(t)).collect();
    if let Some(values) = numeric {
        let mut pairs: Vec<(f64, &str)> =
            values.into_iter().zip(distinct.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        pairs.into_iter().map(|(_, t)| t.to_string()).collect()
    } else {
        distinct.into_iter().map(str::to_string).collect()
    }
}

/// Writes `ds` as CSV. Categorical codes are written back as their tokens and
/// labels as class names under `label_column`.
pub fn write_csv<W: std::io::Write>(
    ds: &Dataset,
    writer: W,
    label_column: &str,
) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ds.features.iter().map(|f| f.name.clone()).collect();
    if ds.labels.is_some() {
        header.push(label_column.to_string());
    }
    wtr.write_record(&header)?;
    for (i, row) in ds.rows.iter().enumerate() {
        let mut record: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, v)| match ds.decode_category(j, *v) {
                Some(token) => token.to_string(),
                None => v.to_string(),
            })
            .collect();
        if let Some(labels) = &ds.labels {
            record.push(ds.class_names[labels[i]].clone());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(ds, file, label_column)
}

/// SplitMix64 generator; see the module docs for the exact shuffle contract.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform index in `0..bound` by multiply-high.
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: Vec<f64>, seed: u64) -> Result<Self, DataError> {
        let spec = Self { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.ratios.is_empty() {
            return Err(DataError::InvalidSplit("no ratios".into()));
        }
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DataError::InvalidSplit(
                "ratios must be finite and non-negative".into(),
            ));
        }
        let total: f64 = self.ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!(
                "ratios sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` rows: `floor(r_i * n)` for all but the last,
    /// remainder to the last; empty partitions then take one row from the largest.
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>, DataError> {
        self.validate()?;
        let k = self.ratios.len();
        if n < k {
            return Err(DataError::TooFewRows { needed: k, have: n });
        }
        let mut sizes: Vec<usize> = self.ratios[..k - 1]
            .iter()
            .map(|r| (r * n as f64 + 1e-9).floor() as usize)
            .collect();
        let used: usize = sizes.iter().sum();
        sizes.push(n.saturating_sub(used));
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let largest = (0..k)
                .max_by_key(|&i| (sizes[i], std::cmp::Reverse(i)))
                .unwrap();
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
        Ok(sizes)
    }
}

/// Row indices per partition plus the spec that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub partitions: Vec<Vec<usize>>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitManifest, DataError> {
    let sizes = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(spec.seed).shuffle(&mut order);
    let mut partitions = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        partitions.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(SplitManifest {
        seed: spec.seed,
        ratios: spec.ratios.clone(),
        partitions,
    })
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Vec<Dataset>, SplitManifest), DataError> {
    let manifest = split_indices(ds.n_rows(), spec)?;
    let parts = manifest
        .partitions
        .iter()
        .map(|idx| ds.subset(idx))
        .collect();
    Ok((parts, manifest))
}
