//! Dataset ingestion, normalization, patient-level splitting, batch
//! scheduling and the synthetic multimodal generator.

mod batch;
mod images;
mod split;
mod synth;
mod tabular;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::NnError;

pub use batch::batch_iter;
pub use images::{load_images, write_pgm, ImageDataset};
pub use split::{patient_key, patients_in_order, split_by_patient, SplitSpec};
pub use synth::{synth_generate, SynthConfig, SYNTH_DELTA};
pub use tabular::{
    apply_minmax, fit_minmax, label_name, load_tabular_csv, parse_label, write_tabular_csv, NormalizationStats,
    TabularDataset, TabularLoad, TabularSchema, LABEL_NAMES,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: unknown label `{value}`")]
    UnknownLabel { path: PathBuf, row: u64, value: String },
    #[error("{path}: row {row}: column `{column}` is not a number: `{value}`")]
    BadNumber {
        path: PathBuf,
        row: u64,
        column: String,
        value: String,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: expected {expected:?} pixels (h, w), found {actual:?}")]
    ImageDims {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample id `{0}` not present in dataset")]
    UnknownId(String),
    #[error("split: {0}")]
    Split(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

/// Row indices of `wanted` within `ids`, in the order of `wanted`.
fn index_of(ids: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    let mut lookup = std::collections::HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if lookup.insert(id.as_str(), i).is_some() {
            return Err(DataError::DuplicateId(id.clone()));
        }
    }
    wanted
        .iter()
        .map(|id| lookup.get(id.as_str()).copied().ok_or_else(|| DataError::UnknownId(id.clone())))
        .collect()
}
