//! Library side of the `platoon` command: scenario parsing, the five
//! subcommands and their file formats. `main.rs` only parses flags.

pub mod commands;
pub mod output;
pub mod scenario;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INFEASIBLE: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) | Self::Io(_) => exit::INPUT,
            Self::Numerical(_) => exit::NUMERICAL,
        }
    }
}
