use std::collections::{BTreeMap, VecDeque};
use std::hint::black_box;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use crate::affinity::{enumerate_topology, pin_in, PinOutcome, Topology};
use crate::baselines::{GlobalOnlyPool, LockedRingPool};
use crate::counters::{CounterEvent, CounterSet, Readings};
use crate::error::PoolError;
use crate::handler::{HandlerKind, LocalHandle, PoolHandler};
use crate::pool::{Pool, PoolStats};
use crate::slot::SlotIndex;

use super::config::{BenchConfig, DescriptorSizes, PinMode, Workload};
use super::report::{AuditResult, BenchReport, HostFingerprint, OpDelta, RunRecord};
use super::BenchError;

/// Runs `config.repetitions` fresh-pool repetitions of the forwarding loop.
///
/// Construction failures and strict-pin failures are errors; an audit
/// violation yields a report with status `Failed`.
pub fn run_forwarding_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let topology = enumerate_topology();
    let host = HostFingerprint::detect();
    let mut runs = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let pool_cfg = config.pool_config();
        let run = match config.handler {
            HandlerKind::TurboMem => {
                let pool = Pool::create(pool_cfg)?;
                run_once(&pool, config, &topology, rep)?
            }
            HandlerKind::GlobalOnly => {
                let pool = GlobalOnlyPool::create(&pool_cfg)?;
                run_once(&pool, config, &topology, rep)?
            }
            HandlerKind::LockedRing => {
                let pool = LockedRingPool::create(&pool_cfg)?;
                run_once(&pool, config, &topology, rep)?
            }
        };
        log::info!(
            "{} rep {rep}: {:.2} Mops/s, audit {}",
            config.handler,
            run.mops,
            if run.audit.passed { "PASS" } else { "FAILED" }
        );
        runs.push(run);
    }
    Ok(BenchReport::from_runs(config.clone(), host, runs))
}

struct WorkerResult {
    ops: u64,
    elapsed: Duration,
    readings: Option<Readings>,
    pinned: bool,
    exhausted: u64,
}

struct Shared {
    abort: AtomicBool,
    failure: Mutex<Option<BenchError>>,
    /// Workers plus the coordinator.
    barrier: Barrier,
}

impl Shared {
    fn fail(&self, err: BenchError) {
        self.abort.store(true, Ordering::SeqCst);
        let mut slot = self.failure.lock().unwrap_or_else(|e| e.into_inner());
        slot.get_or_insert(err);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

fn run_once<H: PoolHandler>(
    pool: &H,
    config: &BenchConfig,
    topology: &Topology,
    rep: usize,
) -> Result<RunRecord, BenchError> {
    let shared = Shared {
        abort: AtomicBool::new(false),
        failure: Mutex::new(None),
        barrier: Barrier::new(config.threads + 1),
    };

    let (results, before, after) = std::thread::scope(|s| {
        let workers: Vec<_> = (0..config.threads)
            .map(|tid| {
                let shared = &shared;
                s.spawn(move || worker(pool, config, topology, tid, shared))
            })
            .collect();

        // 1: pinned + registered; 2: warmed up; 3: go; 4: measured.
        shared.barrier.wait();
        shared.barrier.wait();
        let before = pool.stats();
        shared.barrier.wait();
        shared.barrier.wait();
        let after = pool.stats();

        let results: Vec<Option<WorkerResult>> = workers
            .into_iter()
            .map(|w| w.join().expect("bench worker panicked"))
            .collect();
        (results, before, after)
    });

    if let Some(err) = shared
        .failure
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
    {
        return Err(err);
    }
    let results: Vec<WorkerResult> = results.into_iter().flatten().collect();

    let measured_ops: u64 = results.iter().map(|r| r.ops).sum();
    let elapsed = results
        .iter()
        .map(|r| r.elapsed)
        .max()
        .unwrap_or_default()
        .as_secs_f64();
    let mops = if elapsed > 0.0 {
        measured_ops as f64 / elapsed / 1e6
    } else {
        0.0
    };

    let counters = aggregate_counters(&config.events, &results);
    let counters_per_op = counters
        .iter()
        .map(|(e, v)| {
            let per_op = v
                .filter(|_| measured_ops > 0)
                .map(|v| v as f64 / measured_ops as f64);
            (*e, per_op)
        })
        .collect();

    let huge_fraction = pool
        .arena()
        .region()
        .inspect_huge_coverage()
        .ok()
        .flatten()
        .map(|c| c.fraction);

    Ok(RunRecord {
        repetition: rep,
        measured_ops,
        elapsed_secs: elapsed,
        mops,
        counters,
        counters_per_op,
        pool_delta: OpDelta {
            global_push_ops: after.global_push_ops.saturating_sub(before.global_push_ops),
            global_pop_ops: after.global_pop_ops.saturating_sub(before.global_pop_ops),
            cas_retries: after.cas_retries.saturating_sub(before.cas_retries),
        },
        exhausted: results.iter().map(|r| r.exhausted).sum(),
        pinned_threads: results.iter().filter(|r| r.pinned).count(),
        huge_fraction,
        audit: audit(pool.stats(), pool.double_claims()),
    })
}

fn audit(stats: PoolStats, double_claims: Option<u64>) -> AuditResult {
    let cached = stats.cached_total();
    let passed = stats.total_allocated == 0
        && stats.global_free + cached == stats.capacity
        && double_claims.unwrap_or(0) == 0;
    AuditResult {
        passed,
        capacity: stats.capacity,
        global_free: stats.global_free,
        cached,
        allocated: stats.total_allocated,
        double_claims,
    }
}

fn aggregate_counters(
    events: &[CounterEvent],
    results: &[WorkerResult],
) -> BTreeMap<CounterEvent, Option<u64>> {
    events
        .iter()
        .map(|&e| {
            let total = results.iter().try_fold(0u64, |acc, r| {
                let v = r.readings.as_ref()?.get(&e).copied().flatten()?;
                Some(acc + v)
            });
            (e, total)
        })
        .collect()
}

struct Forwarder<'a, L: LocalHandle, H: PoolHandler> {
    pool: &'a H,
    local: L,
    sizes: DescriptorSizes,
    in_flight: VecDeque<SlotIndex>,
    burst: usize,
    fill: u8,
    exhausted: u64,
}

impl<L: LocalHandle, H: PoolHandler> Forwarder<'_, L, H> {
    /// One simulated packet. Returns false if the pool was empty.
    #[inline]
    fn step(&mut self) -> Result<bool, PoolError> {
        let slot = match self.local.alloc() {
            Ok(s) => s,
            Err(PoolError::PoolExhausted) => {
                self.exhausted += 1;
                if let Some(old) = self.in_flight.pop_front() {
                    self.local.free(old)?;
                }
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let len = self.sizes.next_size();
        let p = self.pool.slot_address(slot)?.as_ptr();
        // SAFETY: the slot is held exclusively and len <= object_size.
        unsafe {
            std::ptr::write_bytes(p, self.fill, len);
            black_box(p.add(len.saturating_sub(1)).read_volatile());
        }
        self.in_flight.push_back(slot);
        while self.in_flight.len() >= self.burst {
            let old = self.in_flight.pop_front().expect("non-empty");
            self.local.free(old)?;
        }
        Ok(true)
    }

    fn finish(mut self) -> Result<u64, PoolError> {
        while let Some(s) = self.in_flight.pop_front() {
            self.local.free(s)?;
        }
        Ok(self.exhausted)
    }
}

fn worker<H: PoolHandler>(
    pool: &H,
    config: &BenchConfig,
    topology: &Topology,
    tid: usize,
    shared: &Shared,
) -> Option<WorkerResult> {
    let pinned = match config.pin {
        PinMode::Off => false,
        mode => {
            let core = topology.cores[tid % topology.cores.len()];
            match pin_in(topology, core) {
                Ok(PinOutcome::Pinned(_)) => true,
                Ok(PinOutcome::Unpinned(why)) if mode == PinMode::Strict => {
                    shared.fail(BenchError::StrictPin(format!(
                        "worker {tid} core {core}: {why}"
                    )));
                    false
                }
                Ok(PinOutcome::Unpinned(why)) => {
                    log::debug!("worker {tid} unpinned: {why}");
                    false
                }
                Err(e) => {
                    shared.fail(BenchError::StrictPin(e.to_string()));
                    false
                }
            }
        }
    };
    let local = match pool.register() {
        Ok(l) => Some(l),
        Err(e) => {
            shared.fail(e.into());
            None
        }
    };

    shared.barrier.wait();
    // Every party checks the flag after the same barrier, so either all
    // proceed or all bail out here.
    if shared.aborted() {
        shared.barrier.wait();
        shared.barrier.wait();
        shared.barrier.wait();
        return None;
    }
    let mut fwd = Forwarder {
        pool,
        local: local.expect("registered"),
        sizes: DescriptorSizes::new(config, tid),
        in_flight: VecDeque::with_capacity(config.burst + 1),
        burst: config.burst,
        fill: tid as u8,
        exhausted: 0,
    };
    let mut counters = CounterSet::open(&config.events);

    let mut error = None;
    let (warm_ops, warm_secs) = config.warmup();
    let warm_start = Instant::now();
    let mut done = 0u64;
    while done < warm_ops || warm_start.elapsed().as_secs_f64() < warm_secs {
        if let Err(e) = fwd.step() {
            error = Some(e);
            break;
        }
        done += 1;
    }
    shared.barrier.wait();
    shared.barrier.wait();

    if !config.events.is_empty() {
        let _ = counters.start();
    }
    let start = Instant::now();
    let mut ops = 0u64;
    if error.is_none() {
        match config.workload {
            Workload::Ops { per_thread } => {
                while ops < per_thread {
                    if let Err(e) = fwd.step() {
                        error = Some(e);
                        break;
                    }
                    ops += 1;
                }
            }
            Workload::Duration { secs } => {
                let limit = Duration::from_secs_f64(secs);
                'outer: loop {
                    for _ in 0..1024 {
                        if let Err(e) = fwd.step() {
                            error = Some(e);
                            break 'outer;
                        }
                    }
                    ops += 1024;
                    if start.elapsed() >= limit {
                        break;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let readings = if config.events.is_empty() {
        None
    } else {
        counters.stop().ok()
    };
    shared.barrier.wait();

    let exhausted = match fwd.finish() {
        Ok(x) => x,
        Err(e) => {
            error.get_or_insert(e);
            0
        }
    };
    if let Some(e) = error {
        // Pool-level errors mid-run (e.g. a detected double free) surface
        // through the audit rather than aborting the matrix.
        log::error!("worker {tid}: {e}");
    }
    Some(WorkerResult {
        ops,
        elapsed,
        readings,
        pinned,
        exhausted,
    })
}
