//! Ingestion and windowing of multivariate time series.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column layout of a multivariate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSchema {
    pub feature_names: Vec<String>,
    /// Seconds per observation.
    pub sample_period: f64,
}

impl SeriesSchema {
    pub fn new(feature_names: Vec<String>, sample_period: f64) -> Result<Self> {
        let schema = SeriesSchema {
            feature_names,
            sample_period,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Schema with generated names `x0..x{m-1}` and unit sample period.
    pub fn numbered(m: usize) -> Self {
        SeriesSchema {
            feature_names: (0..m).map(|i| format!("x{i}")).collect(),
            sample_period: 1.0,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_names.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.feature_names {
            if name.trim().is_empty() {
                return Err(Error::Schema("empty feature name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{name}`")));
            }
        }
        if !(self.sample_period > 0.0) || !self.sample_period.is_finite() {
            return Err(Error::Schema(format!(
                "sample_period must be positive, got {}",
                self.sample_period
            )));
        }
        Ok(())
    }

    /// Number of samples covering `seconds` of wall-clock time (at least 2).
    pub fn samples_for_duration(&self, seconds: f64) -> usize {
        ((seconds / self.sample_period).round() as usize).max(2)
    }
}

/// Time-ordered rows of `M` reals with optional per-row binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub schema: SeriesSchema,
    /// `N x M`, one row per observation.
    pub data: DMatrix<f64>,
    pub labels: Option<Vec<u8>>,
}

impl Series {
    pub fn new(schema: SeriesSchema, data: DMatrix<f64>, labels: Option<Vec<u8>>) -> Result<Self> {
        schema.validate()?;
        if data.ncols() != schema.feature_count() {
            return Err(Error::Shape {
                expected: format!("{} columns", schema.feature_count()),
                got: format!("{} columns", data.ncols()),
            });
        }
        if let Some(l) = &labels {
            if l.len() != data.nrows() {
                return Err(Error::Shape {
                    expected: format!("{} labels", data.nrows()),
                    got: format!("{} labels", l.len()),
                });
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series contains non-finite values"));
        }
        Ok(Series {
            schema,
            data,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }
}

/// Result of [`load_csv`].
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub series: Series,
    /// Rows dropped because a cell was missing, non-numeric or non-finite.
    pub dropped_rows: usize,
}

/// Read a CSV file with a header row. A column named `label_column` (if
/// present) is split off as per-row binary labels. Rows with any missing,
/// non-numeric or non-finite cell are dropped and counted.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema_hint: Option<&SeriesSchema>,
    label_column: &str,
) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema_hint, label_column)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    schema_hint: Option<&SeriesSchema>,
    label_column: &str,
) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers.iter().position(|h| h == label_column);
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != label_idx).collect();
    let names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();

    let schema = match schema_hint {
        Some(hint) => {
            if hint.feature_names != names {
                return Err(Error::Schema(format!(
                    "header {:?} does not match schema {:?}",
                    names, hint.feature_names
                )));
            }
            hint.clone()
        }
        None => SeriesSchema::new(names, 1.0)?,
    };

    let m = feature_cols.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record?;
        if record.len() != headers.len() {
            dropped += 1;
            continue;
        }
        let row: Option<Vec<f64>> = feature_cols
            .iter()
            .map(|&i| record[i].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let label = match label_idx {
            Some(i) => match record[i].parse::<f64>() {
                Ok(0.0) => Some(0u8),
                Ok(1.0) => Some(1u8),
                _ => None,
            },
            None => Some(0),
        };
        match (row, label) {
            (Some(row), Some(label)) => {
                values.extend(row);
                labels.push(label);
            }
            _ => dropped += 1,
        }
    }
    let n = labels.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "fewer than 2 valid rows ({n} valid, {dropped} dropped)"
        )));
    }
    let data = DMatrix::from_row_slice(n, m, &values);
    let labels = label_idx.map(|_| labels);
    Ok(LoadedCsv {
        series: Series::new(schema, data, labels)?,
        dropped_rows: dropped,
    })
}

/// Write a series (and its labels, if any) as CSV with a header row.
pub fn write_csv(series: &Series, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = series.schema.feature_names.clone();
    if series.labels.is_some() {
        header.push(label_column.to_string());
    }
    wtr.write_record(&header)?;
    for r in 0..series.len() {
        let mut rec: Vec<String> = (0..series.data.ncols())
            .map(|c| format!("{}", series.data[(r, c)]))
            .collect();
        if let Some(l) = &series.labels {
            rec.push(l[r].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-feature location and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; zero for constant features.
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot standardize an empty series"));
        }
        let mut means = Vec::with_capacity(data.ncols());
        let mut sds = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            means.push(mean);
            sds.push(if sd <= 1e-12 * (1.0 + mean.abs()) { 0.0 } else { sd });
        }
        Ok(Standardizer { means, sds })
    }

    /// Indices of features whose standard deviation is zero.
    pub fn constant_features(&self) -> Vec<usize> {
        self.sds
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = data.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.means[c], self.sds[c]);
            for v in col.iter_mut() {
                *v = if sd == 0.0 { 0.0 } else { (*v - mu) / sd };
            }
        }
        out
    }
}

/// Output of [`standardize`].
#[derive(Debug, Clone)]
pub struct Standardized {
    pub series: Series,
    pub stats: Standardizer,
    /// Constant features, mapped to all zeros.
    pub constant_features: Vec<usize>,
}

/// Z-score every feature with its population standard deviation.
pub fn standardize(series: &Series) -> Result<Standardized> {
    let stats = Standardizer::fit(&series.data)?;
    let data = stats.apply(&series.data);
    Ok(Standardized {
        constant_features: stats.constant_features(),
        series: Series {
            schema: series.schema.clone(),
            data,
            labels: series.labels.clone(),
        },
        stats,
    })
}

/// One fixed-length segment of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    /// `k x M`.
    pub data: DMatrix<f64>,
    pub label: Option<u8>,
}

/// Contiguous, non-overlapping windows of `window_length` rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedStream {
    pub schema: SeriesSchema,
    pub window_length: usize,
    pub windows: Vec<Window>,
}

impl WindowedStream {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window labels; `None` if any window is unlabeled.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.windows.iter().map(|w| w.label).collect()
    }
}

/// Cut a series into `floor(N/k)` windows. A window is labeled 1 when any of
/// its rows is labeled 1. The trailing remainder is discarded.
pub fn segment(series: &Series, k: usize, labels: Option<&[u8]>) -> Result<WindowedStream> {
    if k < 2 {
        return Err(Error::invalid(format!("window length must be >= 2, got {k}")));
    }
    let n = series.len();
    if k > n {
        return Err(Error::invalid(format!(
            "window length {k} exceeds series length {n}"
        )));
    }
    let labels = labels.or(series.labels.as_deref());
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} labels"),
                got: format!("{} labels", l.len()),
            });
        }
    }
    let m = series.data.ncols();
    let windows = (0..n / k)
        .map(|w| Window {
            index: w,
            data: series.data.view((w * k, 0), (k, m)).into_owned(),
            label: labels.map(|l| u8::from(l[w * k..(w + 1) * k].contains(&1))),
        })
        .collect();
    Ok(WindowedStream {
        schema: series.schema.clone(),
        window_length: k,
        windows,
    })
}

/// Known attack points and the nodes they impact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorKnowledge {
    pub attack_nodes: BTreeSet<String>,
    pub impact_nodes: BTreeSet<String>,
}

impl PriorKnowledge {
    pub fn new<I, J, S, T>(attack: I, impact: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        PriorKnowledge {
            attack_nodes: attack.into_iter().map(Into::into).collect(),
            impact_nodes: impact.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.attack_nodes.is_empty() && self.impact_nodes.is_empty()
    }

    /// Check that every identifier is a schema feature.
    pub fn validate(&self, schema: &SeriesSchema) -> Result<()> {
        for id in self.attack_nodes.iter().chain(&self.impact_nodes) {
            if schema.index_of(id).is_none() {
                return Err(Error::Schema(format!("prior-knowledge node `{id}` not in schema")));
            }
        }
        Ok(())
    }

    /// Indices of attack ∪ impact nodes against `node_ids`; unknown ids are skipped.
    pub fn domain_indices(&self, node_ids: &[String]) -> BTreeSet<usize> {
        self.attack_nodes
            .iter()
            .chain(&self.impact_nodes)
            .filter_map(|id| node_ids.iter().position(|n| n == id))
            .collect()
    }

    pub fn attack_indices(&self, node_ids: &[String]) -> BTreeSet<usize> {
        self.attack_nodes
            .iter()
            .filter_map(|id| node_ids.iter().position(|n| n == id))
            .collect()
    }
}
