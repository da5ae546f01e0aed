use crate::config::HugePolicy;
use crate::handler::HandlerKind;

use super::config::BenchConfig;
use super::report::{BenchReport, HostFingerprint};
use super::run::run_forwarding_bench;
use super::BenchError;

/// Axes of a benchmark matrix. An empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatrixAxes {
    pub handlers: Vec<HandlerKind>,
    pub huge_policies: Vec<HugePolicy>,
    pub threads: Vec<usize>,
    pub object_sizes: Vec<usize>,
}

impl MatrixAxes {
    /// Parses `axis=v1,v2;axis=...`, e.g.
    /// `handler=turbomem,locked-ring;huge=plain,advise;threads=1,2,4`.
    pub fn parse(spec: &str) -> Result<Self, BenchError> {
        let mut axes = MatrixAxes::default();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| BenchError::Matrix(format!("missing '=' in {part:?}")))?;
            let values = values.split(',').map(str::trim).filter(|v| !v.is_empty());
            match key.trim() {
                "handler" | "handlers" => {
                    axes.handlers = values
                        .map(|v| v.parse())
                        .collect::<Result<_, String>>()
                        .map_err(BenchError::Matrix)?;
                }
                "huge" | "huge_policy" => {
                    axes.huge_policies = values
                        .map(|v| v.parse())
                        .collect::<Result<_, String>>()
                        .map_err(BenchError::Matrix)?;
                }
                "threads" => axes.threads = parse_numbers(values)?,
                "object_size" | "size" => axes.object_sizes = parse_numbers(values)?,
                other => return Err(BenchError::Matrix(format!("unknown axis {other:?}"))),
            }
        }
        Ok(axes)
    }

    /// Every cell of the Cartesian product, in handler-major order.
    pub fn cells(&self, base: &BenchConfig) -> Vec<BenchConfig> {
        let handlers = or_base(&self.handlers, base.handler);
        let policies = or_base(&self.huge_policies, base.huge_policy);
        let threads = or_base(&self.threads, base.threads);
        let sizes = or_base(&self.object_sizes, base.object_size);
        let mut out = Vec::new();
        for &handler in &handlers {
            for &huge_policy in &policies {
                for &t in &threads {
                    for &object_size in &sizes {
                        out.push(BenchConfig {
                            handler,
                            huge_policy,
                            threads: t,
                            object_size,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

fn parse_numbers<'a>(values: impl Iterator<Item = &'a str>) -> Result<Vec<usize>, BenchError> {
    values
        .map(|v| {
            v.parse()
                .map_err(|_| BenchError::Matrix(format!("not a number: {v:?}")))
        })
        .collect()
}

/// Runs every cell; a cell that cannot run yields an `Error` report and the
/// remaining cells still execute.
pub fn run_matrix(base: &BenchConfig, axes: &MatrixAxes) -> Vec<BenchReport> {
    let mut host = None;
    axes.cells(base)
        .into_iter()
        .map(|cell| match run_forwarding_bench(&cell) {
            Ok(report) => report,
            Err(err) => {
                log::warn!(
                    "cell {} x{} {}: {err}",
                    cell.handler,
                    cell.threads,
                    cell.huge_policy
                );
                let host = host.get_or_insert_with(HostFingerprint::detect).clone();
                BenchReport::from_error(cell, host, &err)
            }
        })
        .collect()
}
