//! Guest and host state machines.
//!
//! Schedule, identical on both sides once alignment is done. For every epoch
//! `e`, training batches `0..B` come from `batch_iter(.., e, shuffle_seed)`:
//! the host sends `BatchForward(e, b)` and waits for `BatchGradient(e, b)`.
//! Validation batches follow, numbered `B..B+V`, as `EvalForward` with no
//! reply. The guest then sends `EpochMetrics(e)`. After the last epoch the
//! guest sends `Shutdown{0}`. With no training rows or no epochs the guest
//! sends `Shutdown{0}` straight after alignment.

use log::{debug, info, warn};
use thiserror::Error;

use crate::alignment::{digest_ids, intersect_hashed, verify_cohort, AlignedCohort, Salt};
use crate::config::SessionConfig;
use crate::data::{batch_iter, ImageDataset, TabularDataset};
use crate::eval::{confusion, ConfusionMatrix, MetricsRecord};
use crate::model::{GuestModel, HostModel, SplitModel};
use crate::nn::Tensor;
use crate::train::{
    eval_batches, gather_labels, partition, prepare_images, prepare_tabular, LossMeter, Partition, TrainError,
};

use super::transport::{Transport, TransportError};
use super::wire::{decode_frame, encode_frame, EncodeError, Message, Role, PROTOCOL_VERSION};

/// `ProtocolError` codes.
pub mod code {
    pub const VERSION: u8 = 1;
    pub const ROLE: u8 = 2;
    pub const DIGEST: u8 = 3;
    pub const OUT_OF_ORDER: u8 = 4;
    pub const SHAPE: u8 = 5;
    pub const UNEXPECTED: u8 = 6;
    pub const ALIGNMENT: u8 = 7;
    pub const MALFORMED: u8 = 8;
    /// The sender hit a local data or model error and is giving up.
    pub const ABORTED: u8 = 9;
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("handshake failed (code {code}): {message}")]
    Handshake { code: u8, message: String },
    #[error("protocol violation by peer (code {code}): {message}")]
    Protocol { code: u8, message: String },
    #[error("peer reported error code {code}: {message}")]
    Peer { code: u8, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot encode message: {0}")]
    Encode(#[from] EncodeError),
}

impl SessionError {
    /// Process exit status: 1 config, 2 handshake, 3 transport, 4 data or
    /// model, 5 protocol violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Transport(_) => 3,
            SessionError::Handshake { .. } => 2,
            SessionError::Protocol { code, .. } | SessionError::Peer { code, .. } => match *code {
                code::VERSION | code::ROLE | code::DIGEST => 2,
                code::ALIGNMENT | code::ABORTED => 4,
                _ => 5,
            },
            SessionError::Train(TrainError::Config(_)) => 1,
            SessionError::Train(_) | SessionError::Encode(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// An established connection after a successful handshake.
pub struct Session<T: Transport> {
    transport: T,
    role: Role,
}

impl<T: Transport> Session<T> {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        self.transport.send_frame(&encode_frame(msg)?)?;
        Ok(())
    }

    /// Next message; a peer `ProtocolError` becomes [`SessionError::Peer`].
    pub fn recv(&mut self) -> Result<Message> {
        let frame = self.transport.recv_frame()?;
        match decode_frame(&frame) {
            Ok(Message::ProtocolError { code, message }) => {
                warn!("{} received protocol error {code}: {message}", self.role);
                Err(SessionError::Peer { code, message })
            }
            Ok(m) => Ok(m),
            Err(e) => Err(self.fail(code::MALFORMED, e.to_string())),
        }
    }

    /// Tells the peer about a violation and returns the matching error.
    pub fn fail(&mut self, code: u8, message: String) -> SessionError {
        warn!("{} aborting with protocol error {code}: {message}", self.role);
        self.notify(code, &message);
        match code {
            code::VERSION | code::ROLE | code::DIGEST => SessionError::Handshake { code, message },
            _ => SessionError::Protocol { code, message },
        }
    }

    /// Best effort: the peer may already be gone.
    fn notify(&mut self, code: u8, message: &str) {
        let msg = Message::ProtocolError {
            code,
            message: message.to_string(),
        };
        if let Ok(frame) = encode_frame(&msg) {
            let _ = self.transport.send_frame(&frame);
        }
    }

    /// Reports a local failure to the peer before returning it.
    fn abort(&mut self, err: impl Into<SessionError>) -> SessionError {
        let err = err.into();
        if matches!(err, SessionError::Train(_) | SessionError::Encode(_)) {
            self.notify(code::ABORTED, &err.to_string());
        }
        err
    }

    fn unexpected(&mut self, wanted: &str, got: &Message) -> SessionError {
        self.fail(code::UNEXPECTED, format!("expected {wanted}, got {}", got.name()))
    }

    fn check_shape(&mut self, t: &Tensor, rows: usize, cols: usize, what: &str) -> Result<()> {
        if t.shape() != [rows, cols] {
            return Err(self.fail(
                code::SHAPE,
                format!("{what} has shape {:?}, expected [{rows}, {cols}]", t.shape()),
            ));
        }
        Ok(())
    }

    fn check_index(&mut self, what: &str, got: (u32, u32), want: (u32, u32)) -> Result<()> {
        if got != want {
            return Err(self.fail(
                code::OUT_OF_ORDER,
                format!("{what} for (epoch {}, batch {}), expected ({}, {})", got.0, got.1, want.0, want.1),
            ));
        }
        Ok(())
    }
}

/// Exchanges `Hello` and checks version, roles and config digest.
pub fn handshake<T: Transport>(transport: T, role: Role, cfg: &SessionConfig) -> Result<Session<T>> {
    let mut s = Session { transport, role };
    let digest = cfg.digest();
    s.send(&Message::Hello {
        protocol_version: PROTOCOL_VERSION,
        role,
        config_digest: digest,
    })?;
    let (version, peer_role, peer_digest) = match s.recv()? {
        Message::Hello {
            protocol_version,
            role,
            config_digest,
        } => (protocol_version, role, config_digest),
        other => return Err(s.unexpected("Hello", &other)),
    };
    if version != PROTOCOL_VERSION {
        return Err(s.fail(
            code::VERSION,
            format!("protocol version {version}, expected {PROTOCOL_VERSION}"),
        ));
    }
    if peer_role == role {
        return Err(s.fail(code::ROLE, format!("both parties claim the {role} role")));
    }
    if peer_digest != digest {
        return Err(s.fail(
            code::DIGEST,
            format!(
                "config digest {} does not match local {}",
                hex::encode(peer_digest),
                hex::encode(digest)
            ),
        ));
    }
    info!("{role} handshake complete, config digest {}", hex::encode(digest));
    Ok(s)
}

/// Guest side: sends salted digests, verifies the returned cohort.
pub fn align_guest<T: Transport>(s: &mut Session<T>, ids: &[String], salt: &Salt) -> Result<AlignedCohort> {
    let digests = match digest_ids(salt, ids) {
        Ok(d) => d,
        Err(e) => {
            s.notify(code::ALIGNMENT, &e.to_string());
            return Err(TrainError::from(e).into());
        }
    };
    s.send(&Message::AlignRequest { digests })?;
    let cohort = match s.recv()? {
        Message::AlignResponse { cohort } => cohort,
        other => return Err(s.unexpected("AlignResponse", &other)),
    };
    if let Err(e) = verify_cohort(ids, &cohort) {
        s.notify(code::ALIGNMENT, &e.to_string());
        return Err(TrainError::from(e).into());
    }
    info!("guest aligned {} of {} local ids", cohort.len(), ids.len());
    Ok(cohort)
}

/// Host side: answers the guest's digests with the ordered cohort.
pub fn align_host<T: Transport>(
    s: &mut Session<T>,
    ids: &[String],
    salt: &Salt,
    order_seed: u64,
) -> Result<AlignedCohort> {
    let digests = match s.recv()? {
        Message::AlignRequest { digests } => digests,
        other => return Err(s.unexpected("AlignRequest", &other)),
    };
    let cohort = match intersect_hashed(ids, salt, &digests, order_seed) {
        Ok(c) => c,
        Err(e) => {
            s.notify(code::ALIGNMENT, &e.to_string());
            return Err(TrainError::from(e).into());
        }
    };
    s.send(&Message::AlignResponse { cohort: cohort.clone() })?;
    info!("host aligned {} of {} local ids", cohort.len(), ids.len());
    Ok(cohort)
}

fn expect_shutdown<T: Transport>(s: &mut Session<T>) -> Result<()> {
    match s.recv()? {
        Message::Shutdown { reason: 0 } => Ok(()),
        other => Err(s.unexpected("Shutdown{0}", &other)),
    }
}

fn trains(cfg: &SessionConfig, train_rows: usize) -> bool {
    cfg.epochs > 0 && train_rows > 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuestOutcome {
    pub metrics: Vec<MetricsRecord>,
    /// Validation confusion matrix of the final epoch.
    pub confusion: Option<ConfusionMatrix>,
}

/// Guest training loop over an aligned, partitioned and normalized cohort.
/// `on_step(epoch, batch, model)` runs after every guest update.
pub fn run_guest<T: Transport>(
    s: &mut Session<T>,
    cfg: &SessionConfig,
    train: &TabularDataset,
    val: &TabularDataset,
    model: &mut GuestModel,
    mut on_step: impl FnMut(u32, u32, &GuestModel),
) -> Result<GuestOutcome> {
    let (Some(train_labels), Some(val_labels)) = (train.labels.as_deref(), val.labels.as_deref()) else {
        return Err(s.abort(TrainError::Data(crate::data::DataError::Invalid("labels missing".into()))));
    };
    let embed = model.embed_dim();
    let mut metrics = Vec::new();
    let mut last_confusion = None;
    if !trains(cfg, train.len()) {
        s.send(&Message::Shutdown { reason: 0 })?;
        return Ok(GuestOutcome {
            metrics,
            confusion: None,
        });
    }
    for epoch in 0..cfg.epochs {
        let batches = batch_iter(train.len(), cfg.batch_size, epoch, cfg.shuffle_seed).map_err(|e| s.abort(TrainError::from(e)))?;
        let mut train_loss = LossMeter::default();
        for (b, idx) in batches.iter().enumerate() {
            let b = b as u32;
            let e_host = match s.recv()? {
                Message::BatchForward {
                    epoch: me,
                    batch: mb,
                    embedding,
                } => {
                    s.check_index("BatchForward", (me, mb), (epoch, b))?;
                    embedding
                }
                other => return Err(s.unexpected("BatchForward", &other)),
            };
            s.check_shape(&e_host, idx.len(), embed, "host embedding")?;
            let tab = train.features.gather_rows(idx).map_err(|e| s.abort(TrainError::from(e)))?;
            let step = model
                .train_batch(&e_host, &tab, &gather_labels(train_labels, idx))
                .map_err(|e| s.abort(TrainError::from(e)))?;
            s.send(&Message::BatchGradient {
                epoch,
                batch: b,
                grad: step.grad_e_host,
            })?;
            train_loss.add(step.loss, idx.len());
            on_step(epoch, b, model);
        }
        let mut val_loss = LossMeter::default();
        let mut preds = Vec::with_capacity(val.len());
        for (v, idx) in eval_batches(val.len(), cfg.batch_size).iter().enumerate() {
            let b = (batches.len() + v) as u32;
            let e_host = match s.recv()? {
                Message::EvalForward {
                    epoch: me,
                    batch: mb,
                    embedding,
                } => {
                    s.check_index("EvalForward", (me, mb), (epoch, b))?;
                    embedding
                }
                other => return Err(s.unexpected("EvalForward", &other)),
            };
            s.check_shape(&e_host, idx.len(), embed, "host embedding")?;
            let tab = val.features.gather_rows(idx).map_err(|e| s.abort(TrainError::from(e)))?;
            let (loss, p) = model
                .evaluate(&e_host, &tab, &gather_labels(val_labels, idx))
                .map_err(|e| s.abort(TrainError::from(e)))?;
            val_loss.add(loss, idx.len());
            preds.extend(p);
        }
        let cm = confusion(val_labels, &preds, cfg.model.num_classes).map_err(|e| s.abort(TrainError::from(e)))?;
        let record = MetricsRecord {
            epoch,
            train_loss: train_loss.mean(),
            val_loss: val_loss.mean(),
            val_accuracy: cm.accuracy(),
        };
        s.send(&Message::EpochMetrics {
            epoch,
            train_loss: record.train_loss,
            val_loss: record.val_loss,
            val_accuracy: record.val_accuracy,
        })?;
        info!(
            "epoch {epoch}: train_loss {:.6} val_loss {:.6} val_accuracy {:.4}",
            record.train_loss, record.val_loss, record.val_accuracy
        );
        metrics.push(record);
        last_confusion = Some(cm);
    }
    s.send(&Message::Shutdown { reason: 0 })?;
    Ok(GuestOutcome {
        metrics,
        confusion: last_confusion,
    })
}

/// Host training loop. Returns the metrics the guest reported.
/// `on_step(epoch, batch, model)` runs after every host update.
pub fn run_host<T: Transport>(
    s: &mut Session<T>,
    cfg: &SessionConfig,
    train: &ImageDataset,
    val: &ImageDataset,
    model: &mut HostModel,
    mut on_step: impl FnMut(u32, u32, &HostModel),
) -> Result<Vec<MetricsRecord>> {
    let embed = model.embed_dim();
    let mut metrics = Vec::new();
    if !trains(cfg, train.len()) {
        expect_shutdown(s)?;
        return Ok(metrics);
    }
    for epoch in 0..cfg.epochs {
        let batches = batch_iter(train.len(), cfg.batch_size, epoch, cfg.shuffle_seed).map_err(|e| s.abort(TrainError::from(e)))?;
        for (b, idx) in batches.iter().enumerate() {
            let b = b as u32;
            let imgs = train.images.gather_rows(idx).map_err(|e| s.abort(TrainError::from(e)))?;
            let (e_host, cache) = model.embed_for_training(&imgs).map_err(|e| s.abort(TrainError::from(e)))?;
            s.send(&Message::BatchForward {
                epoch,
                batch: b,
                embedding: e_host,
            })?;
            let grad = match s.recv()? {
                Message::BatchGradient {
                    epoch: me,
                    batch: mb,
                    grad,
                } => {
                    s.check_index("BatchGradient", (me, mb), (epoch, b))?;
                    grad
                }
                other => return Err(s.unexpected("BatchGradient", &other)),
            };
            s.check_shape(&grad, idx.len(), embed, "gradient")?;
            model
                .apply_gradient(&cache, &grad)
                .map_err(|e| s.abort(TrainError::from(e)))?;
            on_step(epoch, b, model);
            debug!("host applied gradient for ({epoch}, {b})");
        }
        for (v, idx) in eval_batches(val.len(), cfg.batch_size).iter().enumerate() {
            let imgs = val.images.gather_rows(idx).map_err(|e| s.abort(TrainError::from(e)))?;
            let e_host = model.embed(&imgs).map_err(|e| s.abort(TrainError::from(e)))?;
            s.send(&Message::EvalForward {
                epoch,
                batch: (batches.len() + v) as u32,
                embedding: e_host,
            })?;
        }
        match s.recv()? {
            Message::EpochMetrics {
                epoch: me,
                train_loss,
                val_loss,
                val_accuracy,
            } => {
                if me != epoch {
                    return Err(s.fail(
                        code::OUT_OF_ORDER,
                        format!("EpochMetrics for epoch {me}, expected {epoch}"),
                    ));
                }
                metrics.push(MetricsRecord {
                    epoch,
                    train_loss,
                    val_loss,
                    val_accuracy,
                });
            }
            other => return Err(s.unexpected("EpochMetrics", &other)),
        }
    }
    expect_shutdown(s)?;
    Ok(metrics)
}

/// Everything a completed guest session produced.
#[derive(Debug, Clone)]
pub struct GuestRun {
    pub partition: Partition,
    pub outcome: GuestOutcome,
    pub model: GuestModel,
}

/// Everything a completed host session produced.
#[derive(Debug, Clone)]
pub struct HostRun {
    pub partition: Partition,
    pub metrics: Vec<MetricsRecord>,
    pub model: HostModel,
}

fn local<T: Transport, V>(s: &mut Session<T>, r: std::result::Result<V, impl Into<TrainError>>) -> Result<V> {
    r.map_err(|e| s.abort(e.into()))
}

/// Full guest side: handshake, alignment, partition and normalization,
/// model construction from the shared seed, training.
pub fn guest_session<T: Transport>(
    transport: T,
    cfg: &SessionConfig,
    tabular: &TabularDataset,
    on_step: impl FnMut(u32, u32, &GuestModel),
) -> Result<GuestRun> {
    cfg.validate().map_err(TrainError::from)?;
    let salt = cfg.salt_bytes().map_err(TrainError::from)?;
    let mut s = handshake(transport, Role::Guest, cfg)?;
    let cohort = align_guest(&mut s, &tabular.ids, &salt)?;
    let part = local(&mut s, partition(&cohort, &cfg.split))?;
    let (train, val) = local(&mut s, prepare_tabular(tabular, &part))?;
    let split = local(&mut s, SplitModel::build(&cfg.model, cfg.model_seed))?;
    let (_, mut model) = local(&mut s, split.into_parties(cfg.optimizer))?;
    let outcome = run_guest(&mut s, cfg, &train, &val, &mut model, on_step)?;
    Ok(GuestRun {
        partition: part,
        outcome,
        model,
    })
}

/// Full host side, mirroring [`guest_session`].
pub fn host_session<T: Transport>(
    transport: T,
    cfg: &SessionConfig,
    images: &ImageDataset,
    on_step: impl FnMut(u32, u32, &HostModel),
) -> Result<HostRun> {
    cfg.validate().map_err(TrainError::from)?;
    let salt = cfg.salt_bytes().map_err(TrainError::from)?;
    let mut s = handshake(transport, Role::Host, cfg)?;
    let cohort = align_host(&mut s, &images.ids, &salt, cfg.order_seed)?;
    let part = local(&mut s, partition(&cohort, &cfg.split))?;
    let (train, val) = local(&mut s, prepare_images(images, &part))?;
    let split = local(&mut s, SplitModel::build(&cfg.model, cfg.model_seed))?;
    let (mut model, _) = local(&mut s, split.into_parties(cfg.optimizer))?;
    let metrics = run_host(&mut s, cfg, &train, &val, &mut model, on_step)?;
    Ok(HostRun {
        partition: part,
        metrics,
        model,
    })
}
