//! Data preparation and the epoch loop shared by standalone and federated
//! training, plus the standalone driver around [`LocalReferenceModel`].

use thiserror::Error;

use crate::alignment::{intersect_plain, AlignError, AlignedCohort};
use crate::config::{ConfigError, SessionConfig, SplitConfig};
use crate::data::{
    apply_minmax, batch_iter, fit_minmax, patients_in_order, split_by_patient, DataError, ImageDataset, SplitSpec,
    TabularDataset,
};
use crate::eval::{confusion, ConfusionMatrix, EvalError, MetricsRecord};
use crate::model::{LocalReferenceModel, SplitModel};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Aligned ids split by patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub cohort: AlignedCohort,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Patients are taken in order of first appearance in the cohort, which is
/// identical on both parties.
pub fn partition(cohort: &AlignedCohort, split: &SplitConfig) -> Result<Partition> {
    let spec = SplitSpec {
        patients: patients_in_order(&cohort.ids, split.patient_delimiter),
        train: split.train,
        val: split.val,
        test: split.test,
    };
    let (train, val, test) = split_by_patient(&cohort.ids, &spec, split.patient_delimiter)?;
    Ok(Partition {
        cohort: cohort.clone(),
        train,
        val,
        test,
    })
}

/// Training and validation rows with min-max statistics fitted on the
/// training rows only. With an empty training split nothing is scaled.
pub fn prepare_tabular(all: &TabularDataset, part: &Partition) -> Result<(TabularDataset, TabularDataset)> {
    if all.labels.is_none() {
        return Err(DataError::Invalid("the label-holding party needs a label column".into()).into());
    }
    let train = all.select(&part.train)?;
    let val = all.select(&part.val)?;
    if train.is_empty() {
        return Ok((train, val));
    }
    let stats = fit_minmax(&train)?;
    Ok((apply_minmax(&stats, &train)?, apply_minmax(&stats, &val)?))
}

pub fn prepare_images(all: &ImageDataset, part: &Partition) -> Result<(ImageDataset, ImageDataset)> {
    Ok((all.select(&part.train)?, all.select(&part.val)?))
}

/// Validation batches: contiguous, unshuffled, `batch_size` rows each. Within
/// an epoch they are numbered after the training batches.
pub fn eval_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn gather_labels(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Sample-weighted loss accumulator for one pass.
#[derive(Debug, Default, Clone)]
pub struct LossMeter {
    weighted: f64,
    samples: usize,
}

impl LossMeter {
    pub fn add(&mut self, mean_loss: f64, rows: usize) {
        self.weighted += mean_loss * rows as f64;
        self.samples += rows;
    }

    /// Mean per sample; 0 when nothing was added.
    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.weighted / self.samples as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    /// Validation confusion matrix of the final epoch; `None` if no epoch ran.
    pub confusion: Option<ConfusionMatrix>,
}

fn labels_of(ds: &TabularDataset) -> Result<&[usize]> {
    ds.labels
        .as_deref()
        .ok_or_else(|| DataError::Invalid("labels missing".into()).into())
}

/// Epoch loop for the monolithic model. `on_step(epoch, batch, model)` runs
/// after every parameter update.
pub fn train_reference(
    model: &mut LocalReferenceModel,
    cfg: &SessionConfig,
    train: (&TabularDataset, &ImageDataset),
    val: (&TabularDataset, &ImageDataset),
    mut on_step: impl FnMut(u32, u32, &LocalReferenceModel),
) -> Result<TrainOutcome> {
    let (train_labels, val_labels) = (labels_of(train.0)?, labels_of(val.0)?);
    let classes = cfg.model.num_classes;
    let mut metrics = Vec::new();
    let mut last_confusion = None;
    if train.0.is_empty() {
        return Ok(TrainOutcome {
            metrics,
            confusion: None,
        });
    }
    for epoch in 0..cfg.epochs {
        let mut train_loss = LossMeter::default();
        for (b, idx) in batch_iter(train.0.len(), cfg.batch_size, epoch, cfg.shuffle_seed)?.iter().enumerate() {
            let imgs = train.1.images.gather_rows(idx)?;
            let tab = train.0.features.gather_rows(idx)?;
            let loss = model.step(&imgs, &tab, &gather_labels(train_labels, idx))?;
            train_loss.add(loss, idx.len());
            on_step(epoch, b as u32, model);
        }
        let mut val_loss = LossMeter::default();
        let mut preds = Vec::with_capacity(val.0.len());
        for idx in eval_batches(val.0.len(), cfg.batch_size) {
            let imgs = val.1.images.gather_rows(&idx)?;
            let tab = val.0.features.gather_rows(&idx)?;
            let (loss, p) = model.evaluate(&imgs, &tab, &gather_labels(val_labels, &idx))?;
            val_loss.add(loss, idx.len());
            preds.extend(p);
        }
        let cm = confusion(val_labels, &preds, classes)?;
        metrics.push(MetricsRecord {
            epoch,
            train_loss: train_loss.mean(),
            val_loss: val_loss.mean(),
            val_accuracy: cm.accuracy(),
        });
        last_confusion = Some(cm);
    }
    Ok(TrainOutcome {
        metrics,
        confusion: last_confusion,
    })
}

/// Everything the standalone driver produced.
#[derive(Debug, Clone)]
pub struct StandaloneRun {
    pub partition: Partition,
    pub outcome: TrainOutcome,
    pub model: LocalReferenceModel,
}

/// Standalone training over both modalities: plain intersection, the same
/// partition and normalization the federated parties use, then
/// [`train_reference`] from the shared model seed.
pub fn standalone(
    cfg: &SessionConfig,
    tabular: &TabularDataset,
    images: &ImageDataset,
    on_step: impl FnMut(u32, u32, &LocalReferenceModel),
) -> Result<StandaloneRun> {
    cfg.validate()?;
    let cohort = intersect_plain(&tabular.ids, &images.ids, cfg.order_seed)?;
    let part = partition(&cohort, &cfg.split)?;
    let (tab_train, tab_val) = prepare_tabular(tabular, &part)?;
    let (img_train, img_val) = prepare_images(images, &part)?;
    let split = SplitModel::build(&cfg.model, cfg.model_seed)?;
    let mut model = LocalReferenceModel::from_split(&split, cfg.optimizer)?;
    let outcome = train_reference(&mut model, cfg, (&tab_train, &img_train), (&tab_val, &img_val), on_step)?;
    Ok(StandaloneRun {
        partition: part,
        outcome,
        model,
    })
}
