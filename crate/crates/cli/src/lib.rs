//! Command-line front end for the `dbtsdf` mapping library.

pub mod commands;
pub mod config;

use dbtsdf::Error;

/// Process exit codes; 2 is left to argument parsing errors.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const FORMAT: i32 = 4;
    pub const CORRUPTION: i32 = 5;
    pub const EVALUATION: i32 = 6;
    pub const IO: i32 = 7;
    pub const RESOURCE: i32 = 8;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::Format(_) => exit::FORMAT,
        Error::Corruption(_) => exit::CORRUPTION,
        Error::Evaluation(_) => exit::EVALUATION,
        Error::Io { .. } => exit::IO,
        Error::Resource(_) => exit::RESOURCE,
        Error::InvalidDirection(_) => exit::FAILURE,
    }
}
