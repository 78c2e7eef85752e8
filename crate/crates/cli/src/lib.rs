//! Config parsing and experiment commands behind the `auxcnn` binary.

pub mod commands;
pub mod config;

use auxcnn_core::Error;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Shape { .. } => 2,
        Error::NumericAbort { .. } | Error::NonFinite(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}
