//! Forwarding micro-benchmark.
//!
//! Each worker loops alloc → write a packet descriptor into the slot →
//! free, which is the memory-path analogue of a forwarding application that
//! takes a buffer per received packet and returns it on transmit. Packet
//! size maps to the number of descriptor bytes written per operation; no
//! NIC or payload DMA is involved.

mod config;
mod matrix;
mod report;
mod run;

use std::io;

use thiserror::Error;

use crate::error::PoolError;

pub use config::{BenchConfig, DescriptorSizes, PinMode, Workload, DEFAULT_WARMUP_OPS, IMIX};
pub use matrix::{run_matrix, MatrixAxes};
pub use report::{
    emit_report, median, metric_rows, parse_report, parse_rows, write_report_file, AuditResult,
    BenchReport, HostFingerprint, MetricRow, OpDelta, ReportFile, ReportFormat, RunRecord,
    RunStatus, Summary, SCHEMA_VERSION,
};
pub use run::run_forwarding_bench;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),

    #[error("pool construction failed: {0}")]
    Pool(#[from] PoolError),

    #[error("strict pinning failed: {0}")]
    StrictPin(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid matrix spec: {0}")]
    Matrix(String),
}
