//! Analysis and simulation toolkit for DDR5 Per Row Activation Counting (PRAC) and
//! Refresh Management (RFM).
//!
//! The crate has two halves. The analytical half (`timing`, `security`, `attack`)
//! evaluates the wave-attack recurrences and throughput-consumption math with exact
//! integer arithmetic. The simulation half (`dram`, `controller`, `mitigations`,
//! `workloads`, `metrics`, `campaign`) is a command-level DDR5 model used to check the
//! analytical claims and to compare mechanisms on synthetic multi-core workloads.

pub mod attack;
pub mod campaign;
pub mod config;
pub mod controller;
pub mod dram;
pub mod metrics;
pub mod mitigations;
pub mod security;
pub mod sim;
pub mod timing;
pub mod workloads;

pub use timing::{Ps, TimingParams};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate recovery cadence: {0}")]
    DegenerateDivisor(String),
    #[error(transparent)]
    Protocol(#[from] dram::ProtocolViolation),
    #[error("scheduler bug: {0}")]
    Scheduler(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input rather than by the run itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidTiming(_) | Error::Precondition(_) | Error::DegenerateDivisor(_))
    }
}
