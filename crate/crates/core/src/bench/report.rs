use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::enumerate_topology;
use crate::backend::{default_backend, ThpMode};
use crate::counters::CounterEvent;

use super::config::BenchConfig;
use super::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostFingerprint {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub numa_nodes: usize,
    pub thp_mode: Option<ThpMode>,
    pub kernel: Option<String>,
}

impl HostFingerprint {
    pub fn detect() -> Self {
        let topo = enumerate_topology();
        HostFingerprint {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: topo.cores.len(),
            numa_nodes: topo.nodes.len(),
            thp_mode: default_backend().thp_mode(),
            kernel: std::fs::read_to_string("/proc/sys/kernel/osrelease")
                .ok()
                .map(|s| s.trim().to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Pass,
    /// The teardown audit found a conservation or uniqueness violation.
    Failed,
    /// The cell could not run (construction or strict precondition).
    Error,
}

/// Teardown conservation audit of one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub passed: bool,
    pub capacity: usize,
    pub global_free: usize,
    pub cached: usize,
    pub allocated: usize,
    /// Double claims seen by the claim stamps (audit mode only).
    pub double_claims: Option<u64>,
}

/// Global-stack (or ring) activity during the measured window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDelta {
    pub global_push_ops: u64,
    pub global_pop_ops: u64,
    pub cas_retries: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repetition: usize,
    pub measured_ops: u64,
    pub elapsed_secs: f64,
    /// Million alloc-touch-free operations per second, all workers.
    pub mops: f64,
    pub counters: BTreeMap<CounterEvent, Option<u64>>,
    pub counters_per_op: BTreeMap<CounterEvent, Option<f64>>,
    pub pool_delta: OpDelta,
    /// Allocation attempts that found the pool empty.
    pub exhausted: u64,
    pub pinned_threads: usize,
    pub huge_fraction: Option<f64>,
    pub audit: AuditResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median_mops: Option<f64>,
    pub min_mops: Option<f64>,
    pub max_mops: Option<f64>,
    /// Median over runs of each event's per-operation delta.
    pub counters_per_op: BTreeMap<CounterEvent, Option<f64>>,
    /// No portable counter equivalent; always null.
    pub memory_bound_pct: Option<f64>,
    /// No portable counter equivalent; always null.
    pub dram_latency_ns: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: BenchConfig,
    pub host: HostFingerprint,
    pub status: RunStatus,
    pub error: Option<String>,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
}

impl BenchReport {
    pub fn from_runs(config: BenchConfig, host: HostFingerprint, runs: Vec<RunRecord>) -> Self {
        let status = if runs.iter().all(|r| r.audit.passed) {
            RunStatus::Pass
        } else {
            RunStatus::Failed
        };
        let summary = summarize(&config, &runs);
        BenchReport {
            schema_version: SCHEMA_VERSION,
            config,
            host,
            status,
            error: None,
            runs,
            summary,
        }
    }

    pub fn from_error(config: BenchConfig, host: HostFingerprint, err: &BenchError) -> Self {
        BenchReport {
            schema_version: SCHEMA_VERSION,
            config,
            host,
            status: RunStatus::Error,
            error: Some(err.to_string()),
            runs: Vec::new(),
            summary: Summary::default(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == RunStatus::Pass
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn summarize(config: &BenchConfig, runs: &[RunRecord]) -> Summary {
    let mops: Vec<f64> = runs.iter().map(|r| r.mops).collect();
    let counters_per_op = config
        .events
        .iter()
        .map(|&e| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.counters_per_op.get(&e).copied().flatten())
                .collect();
            // Only report when every run produced the event.
            let v = if vals.len() == runs.len() {
                median(&vals)
            } else {
                None
            };
            (e, v)
        })
        .collect();
    Summary {
        median_mops: median(&mops),
        min_mops: mops.iter().copied().reduce(f64::min),
        max_mops: mops.iter().copied().reduce(f64::max),
        counters_per_op,
        memory_bound_pct: None,
        dram_latency_ns: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Top-level JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub reports: Vec<BenchReport>,
}

/// One row of the flat table: a single metric of a single run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub cell: usize,
    pub handler: String,
    pub threads: usize,
    pub huge_policy: String,
    pub status: RunStatus,
    pub repetition: usize,
    pub metric: String,
    pub value: Option<f64>,
}

pub fn metric_rows(reports: &[BenchReport]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (cell, report) in reports.iter().enumerate() {
        let c = &report.config;
        for run in &report.runs {
            let mut push = |metric: String, value: Option<f64>| {
                rows.push(MetricRow {
                    cell,
                    handler: c.handler.to_string(),
                    threads: c.threads,
                    huge_policy: c.huge_policy.to_string(),
                    status: report.status,
                    repetition: run.repetition,
                    metric,
                    value,
                })
            };
            push("mops".into(), Some(run.mops));
            push("measured_ops".into(), Some(run.measured_ops as f64));
            push("elapsed_secs".into(), Some(run.elapsed_secs));
            push(
                "global_push_ops".into(),
                Some(run.pool_delta.global_push_ops as f64),
            );
            push(
                "global_pop_ops".into(),
                Some(run.pool_delta.global_pop_ops as f64),
            );
            push(
                "cas_retries".into(),
                Some(run.pool_delta.cas_retries as f64),
            );
            push("exhausted".into(), Some(run.exhausted as f64));
            push("pinned_threads".into(), Some(run.pinned_threads as f64));
            push("huge_fraction".into(), run.huge_fraction);
            push(
                "audit_passed".into(),
                Some(if run.audit.passed { 1.0 } else { 0.0 }),
            );
            for (event, per_op) in &run.counters_per_op {
                push(format!("{event}_per_op"), *per_op);
            }
        }
    }
    rows
}

/// Serializes `reports` to `out`.
pub fn emit_report<W: Write>(
    reports: &[BenchReport],
    format: ReportFormat,
    out: W,
) -> Result<(), BenchError> {
    match format {
        ReportFormat::Json => {
            let doc = ReportFile {
                schema_version: SCHEMA_VERSION,
                reports: reports.to_vec(),
            };
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &doc)?;
            out.write_all(b"\n")?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in metric_rows(reports) {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

pub fn write_report_file(
    reports: &[BenchReport],
    format: ReportFormat,
    path: &Path,
) -> Result<(), BenchError> {
    let file = File::create(path)?;
    emit_report(reports, format, io::BufWriter::new(file))
}

pub fn parse_report(json: &str) -> Result<ReportFile, BenchError> {
    Ok(serde_json::from_str(json)?)
}

pub fn parse_rows(csv_text: &str) -> Result<Vec<MetricRow>, BenchError> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(BenchError::from)
}
