use std::path::Path;

use crate::nn::Tensor;

use super::{index_of, io_err, DataError, Result};

/// Canonical spelling of each class, by index.
pub const LABEL_NAMES: [&str; 3] = ["Nondemented", "Demented", "Converted"];

/// Maps a group label to its class index. Case, spaces and hyphens are
/// ignored, so `Non-Demented` and `nondemented` are the same class.
pub fn parse_label(raw: &str) -> Option<usize> {
    let key: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect();
    match key.as_str() {
        "nondemented" => Some(0),
        "demented" => Some(1),
        "converted" => Some(2),
        _ => None,
    }
}

pub fn label_name(class: usize) -> String {
    LABEL_NAMES.get(class).map_or_else(|| format!("class{class}"), |s| s.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub ids: Vec<String>,
    /// `[N × F]`.
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub feature_names: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let idx = index_of(&self.ids, ids)?;
        Ok(Self {
            ids: ids.to_vec(),
            features: self.features.gather_rows(&idx)?,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
        })
    }
}

/// Which columns of a tabular CSV carry the id and the label; every other
/// column not listed in `ignore` is a numeric feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularSchema {
    pub id_column: String,
    pub label_column: Option<String>,
    pub ignore: Vec<String>,
}

impl Default for TabularSchema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            label_column: Some("group".into()),
            ignore: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularLoad {
    pub dataset: TabularDataset,
    /// Rows discarded because a feature, id or label cell was empty or `NA`.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

pub fn load_tabular_csv(path: &Path, schema: &TabularSchema) -> Result<TabularLoad> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let id_col = find(&schema.id_column)?;
    let label_col = schema.label_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && Some(i) != label_col && !schema.ignore.iter().any(|n| n == &headers[i]))
        .collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut needed = vec![id_col];
        needed.extend(label_col);
        needed.extend(&feature_cols);
        if needed.iter().any(|&i| is_missing(cell(i))) {
            dropped += 1;
            continue;
        }
        for &c in &feature_cols {
            let raw = cell(c);
            let v: f32 = raw.parse().map_err(|_| DataError::BadNumber {
                path: path.to_path_buf(),
                row,
                column: headers[c].to_string(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::BadNumber {
                    path: path.to_path_buf(),
                    row,
                    column: headers[c].to_string(),
                    value: raw.to_string(),
                });
            }
            data.push(v);
        }
        if let Some(lc) = label_col {
            let raw = cell(lc);
            labels.push(parse_label(raw).ok_or_else(|| DataError::UnknownLabel {
                path: path.to_path_buf(),
                row,
                value: raw.to_string(),
            })?);
        }
        ids.push(cell(id_col).to_string());
    }
    let features = Tensor::new(vec![ids.len(), feature_cols.len()], data)?;
    let dataset = TabularDataset {
        ids,
        features,
        labels: label_col.map(|_| labels),
        feature_names,
    };
    // duplicate ids are a data error, not something alignment should see
    index_of(&dataset.ids, &[])?;
    Ok(TabularLoad { dataset, dropped })
}

/// Writes `id,<features...>[,group]`; floats use the shortest representation
/// that parses back to the same value.
pub fn write_tabular_csv(path: &Path, ds: &TabularDataset) -> Result<()> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    if ds.labels.is_some() {
        header.push("group".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (n, id) in ds.ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(ds.features.row(n).iter().map(|v| v.to_string()));
        if let Some(l) = &ds.labels {
            rec.push(label_name(l[n]));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-feature range of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

pub fn fit_minmax(train: &TabularDataset) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(DataError::Invalid("cannot fit normalization on an empty training split".into()));
    }
    let f = train.num_features();
    let mut min = vec![f32::INFINITY; f];
    let mut max = vec![f32::NEG_INFINITY; f];
    for n in 0..train.len() {
        for (j, &v) in train.features.row(n).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormalizationStats { min, max })
}

/// `(x − min)/(max − min)` per feature; constant features become 0. Values
/// outside the fitted range are not clamped.
pub fn apply_minmax(stats: &NormalizationStats, ds: &TabularDataset) -> Result<TabularDataset> {
    let f = ds.num_features();
    if stats.min.len() != f {
        return Err(DataError::Invalid(format!(
            "normalization fitted on {} features, dataset has {f}",
            stats.min.len()
        )));
    }
    let mut out = ds.clone();
    for row in out.features.data_mut().chunks_mut(f.max(1)) {
        for (j, v) in row.iter_mut().enumerate() {
            let range = stats.max[j] - stats.min[j];
            *v = if range > 0.0 { (*v - stats.min[j]) / range } else { 0.0 };
        }
    }
    Ok(out)
}
