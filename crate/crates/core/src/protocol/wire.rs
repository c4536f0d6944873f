//! Bit-exact frame encoding.
//!
//! Frame: `u32 length ‖ u8 msg_type ‖ payload`, big-endian, where `length`
//! counts payload bytes only. Tensors travel as
//! `0x01 ‖ u8 rank ‖ u32 dims[rank] ‖ f32 data` (row-major, big-endian).

use thiserror::Error;

use crate::alignment::AlignedCohort;
use crate::nn::Tensor;

pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 1 << 28;
pub const DTYPE_F32: u8 = 0x01;

pub mod msg_type {
    pub const HELLO: u8 = 0x01;
    pub const ALIGN_REQUEST: u8 = 0x02;
    pub const ALIGN_RESPONSE: u8 = 0x03;
    pub const BATCH_FORWARD: u8 = 0x10;
    pub const BATCH_GRADIENT: u8 = 0x11;
    pub const EVAL_FORWARD: u8 = 0x12;
    pub const EPOCH_METRICS: u8 = 0x20;
    pub const SHUTDOWN: u8 = 0x7E;
    pub const PROTOCOL_ERROR: u8 = 0x7F;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Guest,
    Host,
}

impl Role {
    pub fn byte(self) -> u8 {
        match self {
            Role::Guest => 0x01,
            Role::Host => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Role::Guest),
            0x02 => Some(Role::Host),
            _ => None,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Guest => "guest",
            Role::Host => "host",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        protocol_version: u16,
        role: Role,
        config_digest: [u8; 32],
    },
    /// Salted id digests; each entry is length-prefixed so a wrong digest
    /// length is detectable by the receiver.
    AlignRequest { digests: Vec<Vec<u8>> },
    AlignResponse { cohort: AlignedCohort },
    BatchForward { epoch: u32, batch: u32, embedding: Tensor },
    BatchGradient { epoch: u32, batch: u32, grad: Tensor },
    EvalForward { epoch: u32, batch: u32, embedding: Tensor },
    EpochMetrics {
        epoch: u32,
        train_loss: f64,
        val_loss: f64,
        val_accuracy: f64,
    },
    Shutdown { reason: u8 },
    ProtocolError { code: u8, message: String },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::AlignRequest { .. } => ALIGN_REQUEST,
            Message::AlignResponse { .. } => ALIGN_RESPONSE,
            Message::BatchForward { .. } => BATCH_FORWARD,
            Message::BatchGradient { .. } => BATCH_GRADIENT,
            Message::EvalForward { .. } => EVAL_FORWARD,
            Message::EpochMetrics { .. } => EPOCH_METRICS,
            Message::Shutdown { .. } => SHUTDOWN,
            Message::ProtocolError { .. } => PROTOCOL_ERROR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::AlignRequest { .. } => "AlignRequest",
            Message::AlignResponse { .. } => "AlignResponse",
            Message::BatchForward { .. } => "BatchForward",
            Message::BatchGradient { .. } => "BatchGradient",
            Message::EvalForward { .. } => "EvalForward",
            Message::EpochMetrics { .. } => "EpochMetrics",
            Message::Shutdown { .. } => "Shutdown",
            Message::ProtocolError { .. } => "ProtocolError",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the 2^28 byte limit")]
    TooLarge(usize),
    #[error("tensor rank {0} does not fit in one byte")]
    Rank(usize),
    #[error("tensor dimension {0} does not fit in 32 bits")]
    Dimension(usize),
    #[error("tensor holds a non-finite value")]
    NonFinite,
    #[error("{0} does not fit its length field")]
    Field(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated: {needed} more bytes needed")]
    Truncated { needed: usize },
    #[error("declared payload length {0} exceeds the 2^28 byte limit")]
    LengthOverflow(u64),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown tensor dtype 0x{0:02x}")]
    Dtype(u8),
    #[error("unknown role 0x{0:02x}")]
    Role(u8),
    #[error("tensor holds a non-finite value")]
    NonFinite,
    #[error("invalid utf-8 text")]
    Utf8,
    #[error("tensor element count overflows")]
    TensorSize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("decode error at byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn len_u32(&mut self, n: usize, what: &'static str) -> Result<(), EncodeError> {
        self.u32(u32::try_from(n).map_err(|_| EncodeError::Field(what))?);
        Ok(())
    }
    fn tensor(&mut self, t: &Tensor) -> Result<(), EncodeError> {
        self.u8(DTYPE_F32);
        let rank = u8::try_from(t.shape().len()).map_err(|_| EncodeError::Rank(t.shape().len()))?;
        self.u8(rank);
        for &d in t.shape() {
            self.u32(u32::try_from(d).map_err(|_| EncodeError::Dimension(d))?);
        }
        self.0.reserve(4 * t.len());
        for v in t.data() {
            if !v.is_finite() {
                return Err(EncodeError::NonFinite);
            }
            self.0.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        Ok(())
    }
}

/// Encodes a tensor alone (the `TensorWire` layout).
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer(Vec::new());
    w.tensor(t)?;
    Ok(w.0)
}

pub fn encode_payload(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Hello {
            protocol_version,
            role,
            config_digest,
        } => {
            w.u16(*protocol_version);
            w.u8(role.byte());
            w.bytes(config_digest);
        }
        Message::AlignRequest { digests } => {
            w.len_u32(digests.len(), "digest count")?;
            for d in digests {
                w.u8(u8::try_from(d.len()).map_err(|_| EncodeError::Field("digest"))?);
                w.bytes(d);
            }
        }
        Message::AlignResponse { cohort } => {
            w.u64(cohort.order_seed);
            w.len_u32(cohort.ids.len(), "id count")?;
            for id in &cohort.ids {
                w.len_u32(id.len(), "id")?;
                w.bytes(id.as_bytes());
            }
        }
        Message::BatchForward { epoch, batch, embedding: t }
        | Message::BatchGradient { epoch, batch, grad: t }
        | Message::EvalForward { epoch, batch, embedding: t } => {
            w.u32(*epoch);
            w.u32(*batch);
            w.tensor(t)?;
        }
        Message::EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        } => {
            w.u32(*epoch);
            w.f64(*train_loss);
            w.f64(*val_loss);
            w.f64(*val_accuracy);
        }
        Message::Shutdown { reason } => w.u8(*reason),
        Message::ProtocolError { code, message } => {
            w.u8(*code);
            w.bytes(message.as_bytes());
        }
    }
    if w.0.len() > MAX_PAYLOAD {
        return Err(EncodeError::TooLarge(w.0.len()));
    }
    Ok(w.0)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let payload = encode_payload(msg)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.push(msg.msg_type());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    /// Offset of `buf[0]` within the frame, for error reporting.
    base: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.base + self.at,
            kind,
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            self.err(DecodeErrorKind::Truncated {
                needed: n - (self.buf.len() - self.at),
            })
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn utf8(&mut self, n: usize) -> Result<String, DecodeError> {
        let start = self.at;
        let raw = self.take(n)?;
        std::str::from_utf8(raw).map(str::to_string).map_err(|_| DecodeError {
            offset: self.base + start,
            kind: DecodeErrorKind::Utf8,
        })
    }
    fn tensor(&mut self) -> Result<Tensor, DecodeError> {
        let start = self.at;
        let dtype = self.u8()?;
        if dtype != DTYPE_F32 {
            return Err(DecodeError {
                offset: self.base + start,
                kind: DecodeErrorKind::Dtype(dtype),
            });
        }
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(4).is_some())
            .ok_or_else(|| self.err(DecodeErrorKind::TensorSize))?;
        let data_at = self.at;
        let raw = self.take(count * 4)?;
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_bits(u32::from_be_bytes(chunk.try_into().expect("4 bytes")));
            if !v.is_finite() {
                return Err(DecodeError {
                    offset: self.base + data_at + 4 * i,
                    kind: DecodeErrorKind::NonFinite,
                });
            }
            data.push(v);
        }
        Ok(Tensor::new(shape, data).expect("element count matches shape"))
    }
}

/// Decodes a tensor in the `TensorWire` layout, rejecting trailing bytes.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, DecodeError> {
    let mut r = Reader { buf: bytes, at: 0, base: 0 };
    let t = r.tensor()?;
    if r.at != bytes.len() {
        return Err(r.err(DecodeErrorKind::TrailingBytes(bytes.len() - r.at)));
    }
    Ok(t)
}

/// Checks a frame header and returns `(payload_length, msg_type)`.
pub fn decode_header(header: &[u8; HEADER_LEN]) -> Result<(usize, u8), DecodeError> {
    let len = u32::from_be_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::LengthOverflow(len as u64),
        });
    }
    Ok((len, header[4]))
}

/// Decodes the payload of a message of type `ty`. Offsets in errors count
/// from the start of the frame.
pub fn decode_payload(ty: u8, payload: &[u8]) -> Result<Message, DecodeError> {
    use msg_type::*;
    let mut r = Reader {
        buf: payload,
        at: 0,
        base: HEADER_LEN,
    };
    let msg = match ty {
        HELLO => {
            let protocol_version = r.u16()?;
            let role_at = r.at;
            let rb = r.u8()?;
            let role = Role::from_byte(rb).ok_or(DecodeError {
                offset: HEADER_LEN + role_at,
                kind: DecodeErrorKind::Role(rb),
            })?;
            let config_digest = r.take(32)?.try_into().expect("32 bytes");
            Message::Hello {
                protocol_version,
                role,
                config_digest,
            }
        }
        ALIGN_REQUEST => {
            let n = r.u32()? as usize;
            let mut digests = Vec::with_capacity(n.min(payload.len()));
            for _ in 0..n {
                let len = r.u8()? as usize;
                digests.push(r.take(len)?.to_vec());
            }
            Message::AlignRequest { digests }
        }
        ALIGN_RESPONSE => {
            let order_seed = r.u64()?;
            let n = r.u32()? as usize;
            let mut ids = Vec::with_capacity(n.min(payload.len()));
            for _ in 0..n {
                let len = r.u32()? as usize;
                ids.push(r.utf8(len)?);
            }
            Message::AlignResponse {
                cohort: AlignedCohort { ids, order_seed },
            }
        }
        BATCH_FORWARD | BATCH_GRADIENT | EVAL_FORWARD => {
            let epoch = r.u32()?;
            let batch = r.u32()?;
            let t = r.tensor()?;
            match ty {
                BATCH_FORWARD => Message::BatchForward {
                    epoch,
                    batch,
                    embedding: t,
                },
                BATCH_GRADIENT => Message::BatchGradient { epoch, batch, grad: t },
                _ => Message::EvalForward {
                    epoch,
                    batch,
                    embedding: t,
                },
            }
        }
        EPOCH_METRICS => Message::EpochMetrics {
            epoch: r.u32()?,
            train_loss: r.f64()?,
            val_loss: r.f64()?,
            val_accuracy: r.f64()?,
        },
        SHUTDOWN => Message::Shutdown { reason: r.u8()? },
        PROTOCOL_ERROR => {
            let code = r.u8()?;
            let rest = payload.len() - r.at;
            Message::ProtocolError {
                code,
                message: r.utf8(rest)?,
            }
        }
        other => {
            return Err(DecodeError {
                offset: 4,
                kind: DecodeErrorKind::UnknownType(other),
            })
        }
    };
    if r.at != payload.len() {
        return Err(r.err(DecodeErrorKind::TrailingBytes(payload.len() - r.at)));
    }
    Ok(msg)
}

/// Decodes exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, DecodeError> {
    let header: &[u8; HEADER_LEN] = bytes.get(..HEADER_LEN).and_then(|h| h.try_into().ok()).ok_or(DecodeError {
        offset: bytes.len(),
        kind: DecodeErrorKind::Truncated {
            needed: HEADER_LEN - bytes.len().min(HEADER_LEN),
        },
    })?;
    let (len, ty) = decode_header(header)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < len {
        return Err(DecodeError {
            offset: bytes.len(),
            kind: DecodeErrorKind::Truncated {
                needed: len - body.len(),
            },
        });
    }
    if body.len() > len {
        return Err(DecodeError {
            offset: HEADER_LEN + len,
            kind: DecodeErrorKind::TrailingBytes(body.len() - len),
        });
    }
    decode_payload(ty, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_golden_bytes() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert_eq!(
            encode_tensor(&t).unwrap(),
            [0x01, 0x01, 0x00, 0x00, 0x00, 0x02, 0x3F, 0x80, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn shutdown_frame() {
        let f = encode_frame(&Message::Shutdown { reason: 0 }).unwrap();
        assert_eq!(f, [0, 0, 0, 1, 0x7E, 0]);
        assert_eq!(decode_frame(&f).unwrap(), Message::Shutdown { reason: 0 });
    }
}
