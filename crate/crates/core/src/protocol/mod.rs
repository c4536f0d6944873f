//! Two-party wire protocol: frames, transports and the training state
//! machines. Embeddings and gradients cross in plaintext; run TCP sessions
//! over a trusted tunnel.

pub mod session;
pub mod transport;
pub mod wire;

pub use session::{
    align_guest, align_host, code, guest_session, handshake, host_session, run_guest, run_host, GuestOutcome,
    GuestRun, HostRun, Session, SessionError,
};
pub use transport::{loopback_pair, Capture, Direction, FrameLog, Loopback, Tcp, Transport, TransportError, DEFAULT_TIMEOUT};
pub use wire::{
    decode_frame, decode_tensor, encode_frame, encode_tensor, DecodeError, DecodeErrorKind, EncodeError, Message, Role,
    PROTOCOL_VERSION,
};
