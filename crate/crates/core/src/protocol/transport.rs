//! Framed, reliable, ordered byte transports: an in-process loopback pair
//! and TCP.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wire::{decode_header, DecodeError, HEADER_LEN, MAX_PAYLOAD};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connecting to {addr} failed: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("binding {addr} failed: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("peer closed the connection")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes is shorter than its header or exceeds the payload limit")]
    BadFrame(usize),
    #[error(transparent)]
    Header(#[from] DecodeError),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// Moves whole frames (header included). Implementations deliver frames in
/// order, without loss or duplication, or fail.
pub trait Transport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Vec<u8>>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        (**self).send_frame(frame)
    }
    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        (**self).recv_frame()
    }
}

fn check_frame(frame: &[u8]) -> Result<()> {
    if frame.len() < HEADER_LEN || frame.len() - HEADER_LEN > MAX_PAYLOAD {
        return Err(TransportError::BadFrame(frame.len()));
    }
    Ok(())
}

/// One end of an in-process channel pair.
pub struct Loopback {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

/// A connected pair of loopback endpoints.
pub fn loopback_pair(timeout: Duration) -> (Loopback, Loopback) {
    // capacity 1024 is far above what strict request/reply alternation needs
    let (a_tx, b_rx) = mpsc::sync_channel(1024);
    let (b_tx, a_rx) = mpsc::sync_channel(1024);
    (
        Loopback {
            tx: a_tx,
            rx: a_rx,
            timeout,
        },
        Loopback {
            tx: b_tx,
            rx: b_rx,
            timeout,
        },
    )
}

impl Transport for Loopback {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        check_frame(frame)?;
        self.tx.send(frame.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }
}

pub struct Tcp {
    stream: TcpStream,
    timeout: Duration,
}

fn map_io(e: io::Error, timeout: Duration) -> TransportError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout(timeout),
        io::ErrorKind::UnexpectedEof
        | io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted
        | io::ErrorKind::BrokenPipe => TransportError::Closed,
        _ => TransportError::Io(e),
    }
}

impl Tcp {
    fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(Self { stream, timeout })
    }

    /// Connects to `addr`, retrying refused attempts until `timeout` has
    /// elapsed so the peer may start second.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|source| TransportError::Connect {
                addr: addr.to_string(),
                source,
            })?
            .collect();
        let deadline = Instant::now() + timeout;
        loop {
            let mut last = io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing");
            for a in &addrs {
                let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
                match TcpStream::connect_timeout(a, left) {
                    Ok(s) => return Self::from_stream(s, timeout),
                    Err(e) => last = e,
                }
            }
            if Instant::now() >= deadline {
                return Err(TransportError::Connect {
                    addr: addr.to_string(),
                    source: last,
                });
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    /// Accepts one connection on an already bound listener, waiting at most
    /// `timeout`.
    pub fn accept(listener: &TcpListener, timeout: Duration) -> Result<Self> {
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        loop {
            match listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    return Self::from_stream(s, timeout);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(TransportError::Timeout(timeout));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn bind(addr: &str) -> Result<TcpListener> {
        TcpListener::bind(addr).map_err(|source| TransportError::Bind {
            addr: addr.to_string(),
            source,
        })
    }

    /// Binds `addr` and accepts one connection.
    pub fn listen(addr: &str, timeout: Duration) -> Result<Self> {
        Self::accept(&Self::bind(addr)?, timeout)
    }
}

impl Transport for Tcp {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        check_frame(frame)?;
        self.stream.write_all(frame).map_err(|e| map_io(e, self.timeout))?;
        self.stream.flush().map_err(|e| map_io(e, self.timeout))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut header = [0u8; HEADER_LEN];
        self.stream.read_exact(&mut header).map_err(|e| map_io(e, self.timeout))?;
        let (len, _) = decode_header(&header)?;
        let mut frame = Vec::with_capacity(HEADER_LEN + len);
        frame.extend_from_slice(&header);
        frame.resize(HEADER_LEN + len, 0);
        self.stream
            .read_exact(&mut frame[HEADER_LEN..])
            .map_err(|e| map_io(e, self.timeout))?;
        Ok(frame)
    }
}

/// Direction of a captured frame relative to the wrapped endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

pub type FrameLog = Arc<Mutex<Vec<(Direction, Vec<u8>)>>>;

/// Records every frame passing through the inner transport.
pub struct Capture<T> {
    inner: T,
    log: FrameLog,
}

impl<T: Transport> Capture<T> {
    pub fn new(inner: T) -> (Self, FrameLog) {
        let log = FrameLog::default();
        (
            Self {
                inner,
                log: Arc::clone(&log),
            },
            log,
        )
    }
}

impl<T: Transport> Transport for Capture<T> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.inner.send_frame(frame)?;
        self.log.lock().expect("capture log").push((Direction::Sent, frame.to_vec()));
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let f = self.inner.recv_frame()?;
        self.log.lock().expect("capture log").push((Direction::Received, f.clone()));
        Ok(f)
    }
}
