//! Classification metrics, per-epoch metric records and PCA export.

mod pca;

use std::fmt::Write as _;

use thiserror::Error;

pub use pca::{loadings_csv, pca2, projections_csv, PcaResult, PCA_MAX_ITERATIONS, PCA_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("class index {value} at position {index} is out of range for {classes} classes")]
    ClassOutOfRange { index: usize, value: usize, classes: usize },
    #[error("pca needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("power iteration for component {component} did not converge (residual {residual:e})")]
    NoConvergence { component: usize, residual: f64 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.counts[c][c]).sum()
    }

    /// `trace/total`, 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// `true\pred,0,1,..` header then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in 0..self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(labels: &[usize], predictions: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (index, (&t, &p)) in labels.iter().zip(predictions).enumerate() {
        for value in [t, p] {
            if value >= classes {
                return Err(EvalError::ClassOutOfRange { index, value, classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Fraction of positions where `predictions` equals `labels`; 0 when empty.
pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u32,
    /// Sample-weighted mean over the epoch's training batches.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// `%g`-style rendering with 6 significant digits: fixed notation for
/// exponents in `[-4, 6)`, scientific otherwise, trailing zeros removed.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.epoch,
            format_g6(r.train_loss),
            format_g6(r.val_loss),
            format_g6(r.val_accuracy)
        );
    }
    s
}

/// Inverse of [`metrics_csv`] up to formatting precision.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(EvalError::Invalid("metrics csv header missing".into()));
    }
    lines
        .map(|line| {
            let bad = || EvalError::Invalid(format!("malformed metrics line `{line}`"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                val_accuracy: num(f[3])?,
            })
        })
        .collect()
}
