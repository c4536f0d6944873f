//! Process exit codes and the error type that carries them.

use vfl_core::protocol::SessionError;
use vfl_core::train::TrainError;

pub const USAGE: i32 = 1;
pub const HANDSHAKE: i32 = 2;
pub const TRANSPORT: i32 = 3;
pub const DATA: i32 = 4;
pub const PROTOCOL: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait OrExit<T> {
    fn or_exit(self, code: i32) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: i32) -> CmdResult<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = e.exit_code();
        debug_assert!(matches!(code, USAGE | HANDSHAKE | TRANSPORT | DATA | PROTOCOL));
        Failure { code, error: e.into() }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Config(_) => USAGE,
            _ => DATA,
        };
        Failure { code, error: e.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_codes_line_up() {
        let e = SessionError::Handshake {
            code: 3,
            message: String::new(),
        };
        assert_eq!(Failure::from(e).code, HANDSHAKE);
        let e = SessionError::Protocol {
            code: 4,
            message: String::new(),
        };
        assert_eq!(Failure::from(e).code, PROTOCOL);
        let e = SessionError::Transport(vfl_core::protocol::TransportError::Closed);
        assert_eq!(Failure::from(e).code, TRANSPORT);
    }
}
