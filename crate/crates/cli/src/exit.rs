//! Process exit codes: 0 success, 2 usage or config, 3 I/O, 4 tolerance.

use std::fmt;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const TOLERANCE: u8 = 4;

/// An error carrying an explicit exit code.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub source: anyhow::Error,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for Coded {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    Coded { code: USAGE, source: e.into() }.into()
}

pub fn tolerance(msg: impl fmt::Display) -> anyhow::Error {
    Coded { code: TOLERANCE, source: anyhow::anyhow!("{msg}") }.into()
}

/// Exit code for an error: an explicit code if one was attached, otherwise
/// derived from the first library or I/O error in the chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    use psvh_core::Error as E;
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidParameter(_) | E::ShapeMismatch(_) | E::IndexOutOfRange { .. } | E::BehindCamera { .. } => {
                    USAGE
                }
                _ => IO,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return IO;
        }
    }
    1
}
