use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, ValueEnum};
use turbomem::bench::{
    emit_report, run_forwarding_bench, run_matrix, write_report_file, BenchConfig, BenchReport,
    HostFingerprint, MatrixAxes, PinMode, ReportFormat, Workload,
};
use turbomem::{CounterEvent, HandlerKind, HugePolicy};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Forwarding micro-benchmark: each worker loops alloc, write a packet
/// descriptor into the slot, free.
#[derive(Debug, Parser)]
#[command(name = "turbomem-bench", version, about)]
struct Args {
    /// Pool implementation: turbomem, global-only or locked-ring.
    #[arg(long, default_value = "turbomem")]
    handler: HandlerKind,

    #[arg(long, default_value_t = 4)]
    threads: usize,

    /// Measured seconds per repetition.
    #[arg(long, conflicts_with = "ops")]
    duration: Option<f64>,

    /// Measured operations per worker, instead of a duration.
    #[arg(long)]
    ops: Option<u64>,

    #[arg(long, default_value_t = 256)]
    object_size: usize,

    #[arg(long, default_value_t = 1_000_000)]
    capacity: usize,

    /// Per-thread cache capacity.
    #[arg(long, default_value_t = 512)]
    cache: usize,

    /// Refill batch (default: half the cache).
    #[arg(long)]
    refill: Option<usize>,

    /// Flush batch (default: half the cache).
    #[arg(long)]
    flush: Option<usize>,

    /// Huge-page policy: plain, advise or require.
    #[arg(long, default_value = "advise")]
    huge: HugePolicy,

    /// Pinning: strict, soft or off.
    #[arg(long, default_value = "soft")]
    pin: PinMode,

    #[arg(long, default_value_t = 128)]
    descriptor_bytes: usize,

    /// Draw descriptor sizes from the 7:4:1 IMIX mix.
    #[arg(long, action = ArgAction::SetTrue)]
    imix: bool,

    /// Comma-separated counter events, e.g. cycles,dtlb-load-misses.
    #[arg(long, value_delimiter = ',')]
    events: Vec<CounterEvent>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "json")]
    format: Format,

    /// Axis spec, e.g. "handler=turbomem,locked-ring;huge=plain,advise;threads=1,2,4".
    #[arg(long)]
    matrix: Option<String>,

    #[arg(long, value_enum, default_value = "off")]
    audit: Switch,

    /// Packets each worker keeps in flight.
    #[arg(long, default_value_t = 1)]
    burst: usize,

    /// Minimum warm-up operations per worker.
    #[arg(long, default_value_t = turbomem::bench::DEFAULT_WARMUP_OPS)]
    warmup_ops: u64,

    /// Bind the pool region to this NUMA node.
    #[arg(long)]
    numa_node: Option<u32>,
}

impl Args {
    fn config(&self) -> BenchConfig {
        let workload = match (self.ops, self.duration) {
            (Some(per_thread), _) => Workload::Ops { per_thread },
            (None, Some(secs)) => Workload::Duration { secs },
            (None, None) => Workload::Duration { secs: 5.0 },
        };
        BenchConfig {
            handler: self.handler,
            threads: self.threads,
            workload,
            object_size: self.object_size,
            capacity: self.capacity,
            cache_capacity: self.cache,
            refill_batch: self.refill.unwrap_or((self.cache / 2).max(1)),
            flush_batch: self.flush.unwrap_or((self.cache / 2).max(1)),
            huge_policy: self.huge,
            pin: self.pin,
            descriptor_bytes: self.descriptor_bytes,
            imix: self.imix,
            burst: self.burst,
            events: self.events.clone(),
            seed: self.seed,
            repetitions: self.reps,
            audit: matches!(self.audit, Switch::On),
            numa_node: self.numa_node,
            warmup_ops: self.warmup_ops,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let base = args.config();

    let reports: Vec<BenchReport> = match &args.matrix {
        Some(spec) => match MatrixAxes::parse(spec) {
            Ok(axes) => run_matrix(&base, &axes),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => vec![run_forwarding_bench(&base).unwrap_or_else(|e| {
            BenchReport::from_error(base.clone(), HostFingerprint::detect(), &e)
        })],
    };

    let format = match args.format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    };
    let written = match &args.out {
        Some(path) => write_report_file(&reports, format, path),
        None => emit_report(&reports, format, io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    for r in &reports {
        let c = &r.config;
        let mops = r
            .summary
            .median_mops
            .map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
        let detail = r.error.as_deref().unwrap_or("");
        eprintln!(
            "{:<12} threads={:<3} huge={:<8} median_mops={:<8} {:?} {detail}",
            c.handler, c.threads, c.huge_policy, mops, r.status
        );
    }

    if reports.iter().all(BenchReport::passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
