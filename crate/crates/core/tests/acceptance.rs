//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{run_oracle_trace, stress, tags_consecutive, CacheModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbomem::backend::{default_backend, ThpMode};
use turbomem::bench::{
    emit_report, parse_report, run_forwarding_bench, AuditResult, BenchConfig, BenchReport,
    HostFingerprint, OpDelta, PinMode, ReportFormat, RunRecord, RunStatus, Summary, Workload,
};
use turbomem::config::HUGE_PAGE_SIZE;
use turbomem::{
    reserve_region, CounterEvent, CounterSet, GlobalOnlyPool, HandlerKind, HugePolicy,
    LockedRingPool, Pool, PoolConfig, PoolHandler, SlotIndex,
};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

/// Name, check and expected wall-clock budget.
type Criterion = (&'static str, fn() -> Verdict, Duration);

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn thp_mode() -> Option<ThpMode> {
    default_backend().thp_mode()
}

fn thp_usable() -> bool {
    matches!(thp_mode(), Some(ThpMode::Madvise | ThpMode::Always))
}

fn conservation() -> Verdict {
    let threads = 8;
    let cfg = PoolConfig::new(64, 16_384)
        .with_cache(64)
        .with_max_threads(threads)
        .with_huge_policy(HugePolicy::AdviseHuge)
        .with_audit(true);
    let mut notes = Vec::new();
    let pool = Pool::create(cfg.clone()).unwrap();
    let s = stress(&pool, threads, 1_000_000, 10, 256, 11);
    notes.push(format!(
        "turbomem {} ops/{} checkpoints",
        s.ops, s.checkpoints
    ));
    let global = GlobalOnlyPool::create(&cfg).unwrap();
    let s = stress(&global, threads, 1_000_000, 10, 256, 12);
    notes.push(format!("global-only {} ops", s.ops));
    let ring = LockedRingPool::create(&cfg).unwrap();
    let s = stress(&ring, threads, 1_000_000, 10, 256, 13);
    notes.push(format!("locked-ring {} ops", s.ops));
    let claims = [
        pool.double_claims(),
        global.double_claims(),
        ring.double_claims(),
    ];
    check(
        claims.iter().all(|c| *c == Some(0)),
        format!("{}; double claims {claims:?}", notes.join(", ")),
    )
}

fn oracle_equivalence() -> Verdict {
    let cfg = PoolConfig::new(64, 256)
        .with_cache(16)
        .with_max_threads(1)
        .with_huge_policy(HugePolicy::PlainPages)
        .with_audit(true);
    let pool = Pool::create(cfg.clone()).unwrap();
    let global = GlobalOnlyPool::create(&cfg).unwrap();
    let ring = LockedRingPool::create(&cfg).unwrap();
    let mut mismatched = Vec::new();
    for seed in 0..100 {
        let a = run_oracle_trace(&mut pool.register().unwrap(), cfg.capacity, seed, 100_000);
        let b = run_oracle_trace(&mut global.register().unwrap(), cfg.capacity, seed, 100_000);
        let c = run_oracle_trace(&mut ring.register().unwrap(), cfg.capacity, seed, 100_000);
        if a != b || a != c {
            mismatched.push(seed);
        }
    }
    check(
        mismatched.is_empty(),
        format!("100 seeds x 1e5 ops x 3 handlers, mismatched seeds {mismatched:?}"),
    )
}

fn aba_stress() -> Verdict {
    let cfg = PoolConfig::new(64, 64)
        .with_cache(4)
        .with_max_threads(4)
        .with_huge_policy(HugePolicy::PlainPages)
        .with_audit(true)
        .with_head_log(1 << 20);
    let pool = Pool::create(cfg.clone()).unwrap();
    stress(&pool, 4, 1_000_000, 4, 12, 31);
    let log = pool.head_log().unwrap();
    let st = pool.stats();
    let cas_total = st.global_push_ops + st.global_pop_ops;
    let final_tag = pool.global_head().tag;
    let tag_matches = final_tag as u64 == cas_total;
    let turbo_ok = tags_consecutive(&log, 3) && tag_matches;

    let global = GlobalOnlyPool::create(&cfg.clone().with_cache(1).with_max_threads(1)).unwrap();
    stress(&global, 4, 1_000_000, 4, 12, 32);
    let glog = global.head_log().unwrap();
    let gst = global.stats();
    let global_ok = tags_consecutive(&glog, 3)
        && global.global_head().tag as u64 == gst.global_push_ops + gst.global_pop_ops;

    // Every slot must still come back out exactly once.
    let mut h = pool.register_thread().unwrap();
    let mut all = h.alloc_bulk(64).unwrap();
    all.sort();
    all.dedup();
    check(
        turbo_ok && global_ok && all.len() == 64,
        format!(
            "tags consecutive over {} / {} logged CASes: {turbo_ok} / {global_ok}; \
             final tag {} = successful CASes {cas_total}: {tag_matches}",
            log.len(),
            glog.len(),
            final_tag
        ),
    )
}

fn hysteresis() -> Verdict {
    let configs = [
        PoolConfig::new(64, 4096).with_max_threads(1),
        PoolConfig::new(64, 4096)
            .with_cache(64)
            .with_batches(48, 16)
            .with_max_threads(1),
        PoolConfig::new(64, 300)
            .with_cache(32)
            .with_batches(7, 29)
            .with_max_threads(1),
    ];
    let mut steps = 0;
    for (i, cfg) in configs.into_iter().enumerate() {
        let cfg = cfg.with_huge_policy(HugePolicy::PlainPages);
        let pool = Pool::create(cfg.clone()).unwrap();
        let mut h = pool.register_thread().unwrap();
        let mut model = CacheModel::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let mut held: Vec<SlotIndex> = Vec::new();
        for step in 0..50_000 {
            let n = rng.gen_range(0..2 * cfg.cache_capacity);
            match rng.gen_range(0..4) {
                0 => {
                    let ok = h.alloc().map(|s| held.push(s)).is_ok();
                    if ok != model.alloc() {
                        return Fail(format!("config {i} step {step}: alloc outcome"));
                    }
                }
                1 => {
                    if let Some(s) = held.pop() {
                        h.free(s).unwrap();
                        model.free();
                    }
                }
                2 => {
                    let ok = h.alloc_bulk(n).map(|v| held.extend(v)).is_ok();
                    if ok != model.alloc_bulk(n) {
                        return Fail(format!("config {i} step {step}: alloc_bulk({n}) outcome"));
                    }
                }
                _ => {
                    let k = n.min(held.len());
                    let batch = held.split_off(held.len() - k);
                    h.free_bulk(&batch).unwrap();
                    model.free_bulk(k);
                }
            }
            let global = pool.stats().global_free;
            if h.cached_count() != model.cached || global != model.global {
                return Fail(format!(
                    "config {i} step {step}: cache {} vs model {}, global {global} vs {}",
                    h.cached_count(),
                    model.cached,
                    model.global
                ));
            }
            steps += 1;
        }
    }
    Pass(format!(
        "{steps} steps over 3 watermark configs match the model"
    ))
}

fn alignment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policies = vec![HugePolicy::PlainPages, HugePolicy::AdviseHuge];
    if thp_usable() {
        policies.push(HugePolicy::RequireHuge);
    }
    let mut slots = 0usize;
    let mut huge_regions = 0;
    for i in 0..1000 {
        let object_size = rng.gen_range(8..=4096);
        let alignment = 1usize << rng.gen_range(6..=12);
        let capacity = rng.gen_range(1..=512);
        let policy = policies[rng.gen_range(0..policies.len())];
        let cfg = PoolConfig::new(object_size, capacity)
            .with_alignment(alignment)
            .with_cache(1)
            .with_max_threads(1)
            .with_huge_policy(policy);
        let region = reserve_region(cfg.region_len(), alignment, policy, None).unwrap();
        let base = region.base().as_ptr() as usize;
        if policy.wants_huge() {
            huge_regions += 1;
            if !base.is_multiple_of(HUGE_PAGE_SIZE) {
                return Fail(format!("config {i}: {policy} base {base:#x}"));
            }
        }
        let pool = Pool::new(cfg, region).unwrap();
        for s in 0..capacity as u32 {
            let addr = pool.slot_address(SlotIndex::new(s)).unwrap().as_ptr() as usize;
            if !addr.is_multiple_of(64) || !addr.is_multiple_of(alignment) {
                return Fail(format!(
                    "config {i}: slot {s} at {addr:#x}, alignment {alignment}"
                ));
            }
        }
        slots += capacity;
    }
    Pass(format!(
        "1000 configs, {slots} slots aligned, {huge_regions} huge-policy bases on 2 MB"
    ))
}

fn huge_promotion() -> Verdict {
    if !thp_usable() {
        return Skip(format!("THP mode {:?}", thp_mode()));
    }
    let len = 64 << 20;
    let advised = reserve_region(len, 64, HugePolicy::AdviseHuge, None).unwrap();
    advised.advise_huge().unwrap();
    advised.touch_pages(None).unwrap();
    let plain = reserve_region(len, 64, HugePolicy::PlainPages, None).unwrap();
    plain.touch_pages(None).unwrap();
    let (Some(a), Some(p)) = (
        advised.inspect_huge_coverage().unwrap(),
        plain.inspect_huge_coverage().unwrap(),
    ) else {
        return Skip("smaps unavailable".into());
    };
    check(
        a.fraction >= 0.9 && p.fraction <= 0.1,
        format!(
            "advised {:.3} (>= 0.9), plain {:.3} (<= 0.1), THP {:?}",
            a.fraction,
            p.fraction,
            thp_mode()
        ),
    )
}

fn forwarding(
    handler: HandlerKind,
    huge_policy: HugePolicy,
    events: Vec<CounterEvent>,
) -> BenchReport {
    run_forwarding_bench(&BenchConfig {
        handler,
        threads: 4,
        workload: Workload::Duration { secs: 5.0 },
        repetitions: 5,
        huge_policy,
        events,
        ..BenchConfig::default()
    })
    .unwrap()
}

fn throughput_ordering() -> Verdict {
    let mut medians = BTreeMap::new();
    for kind in HandlerKind::ALL {
        let r = forwarding(kind, HugePolicy::AdviseHuge, Vec::new());
        if !r.passed() {
            return Fail(format!("{kind} audit {:?}", r.status));
        }
        medians.insert(kind, r.summary.median_mops.unwrap());
    }
    let t = medians[&HandlerKind::TurboMem];
    let g = medians[&HandlerKind::GlobalOnly];
    let l = medians[&HandlerKind::LockedRing];
    check(
        t >= l,
        format!(
            "median Mops/s turbomem {t:.2}, global-only {g:.2}, locked-ring {l:.2}; \
             full ordering {}",
            if t >= g && g >= l {
                "holds"
            } else {
                "does not hold"
            }
        ),
    )
}

fn dtlb_ordering() -> Verdict {
    if !thp_usable() {
        return Skip(format!("THP mode {:?}", thp_mode()));
    }
    if !CounterSet::open(&[CounterEvent::DtlbLoadMisses]).is_available(CounterEvent::DtlbLoadMisses)
    {
        return Skip("dtlb-load-misses counter unavailable".into());
    }
    let per_op = |policy| {
        forwarding(
            HandlerKind::TurboMem,
            policy,
            vec![CounterEvent::DtlbLoadMisses],
        )
        .summary
        .counters_per_op
        .get(&CounterEvent::DtlbLoadMisses)
        .copied()
        .flatten()
    };
    match (
        per_op(HugePolicy::AdviseHuge),
        per_op(HugePolicy::PlainPages),
    ) {
        (Some(huge), Some(plain)) => check(
            huge < plain,
            format!("dtlb-load-misses/op advise {huge:.3e}, plain {plain:.3e}"),
        ),
        _ => Skip("counter dropped out during the run".into()),
    }
}

fn random_report(rng: &mut ChaCha8Rng) -> BenchReport {
    let mut f = || -> f64 {
        match rng.gen_range(0..4) {
            0 => rng.gen::<f64>(),
            1 => rng.gen::<f64>() * 1e9,
            2 => f64::from_bits(rng.gen_range(0x0010_0000_0000_0000..0x7fe0_0000_0000_0000)),
            _ => rng.gen_range(0..1_000_000) as f64,
        }
    };
    let vals: Vec<f64> = (0..64).map(|_| f()).collect();
    let mut vi = vals.into_iter().cycle();
    let mut v = move || vi.next().unwrap();

    let handler = HandlerKind::ALL[rng.gen_range(0..3)];
    let huge_policy = [
        HugePolicy::PlainPages,
        HugePolicy::AdviseHuge,
        HugePolicy::RequireHuge,
    ][rng.gen_range(0..3)];
    let events: Vec<CounterEvent> = CounterEvent::ALL
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    let config = BenchConfig {
        handler,
        huge_policy,
        threads: rng.gen_range(1..=64),
        workload: if rng.gen_bool(0.5) {
            Workload::Duration { secs: v() }
        } else {
            Workload::Ops {
                per_thread: rng.gen(),
            }
        },
        pin: [PinMode::Strict, PinMode::Soft, PinMode::Off][rng.gen_range(0..3)],
        imix: rng.gen(),
        events: events.clone(),
        seed: rng.gen(),
        numa_node: rng.gen_bool(0.3).then(|| rng.gen_range(0..4)),
        ..BenchConfig::default()
    };
    let host = HostFingerprint {
        os: "linux".into(),
        arch: ["x86_64", "aarch64"][rng.gen_range(0..2)].into(),
        cpus: rng.gen_range(1..256),
        numa_nodes: rng.gen_range(1..8),
        thp_mode: [
            None,
            Some(ThpMode::Always),
            Some(ThpMode::Madvise),
            Some(ThpMode::Never),
        ][rng.gen_range(0..4)],
        kernel: rng
            .gen_bool(0.8)
            .then(|| format!("6.{}.{}", rng.gen_range(0..20), rng.gen_range(0..100))),
    };
    let status = [RunStatus::Pass, RunStatus::Failed, RunStatus::Error][rng.gen_range(0..3)];
    let runs: Vec<RunRecord> = (0..rng.gen_range(0..6))
        .map(|repetition| {
            let counters: BTreeMap<_, _> = events
                .iter()
                .map(|&e| (e, rng.gen_bool(0.7).then(|| rng.gen())))
                .collect();
            let counters_per_op = events
                .iter()
                .map(|&e| (e, rng.gen_bool(0.7).then(&mut v)))
                .collect();
            RunRecord {
                repetition,
                measured_ops: rng.gen(),
                elapsed_secs: v(),
                mops: v(),
                counters,
                counters_per_op,
                pool_delta: OpDelta {
                    global_push_ops: rng.gen(),
                    global_pop_ops: rng.gen(),
                    cas_retries: rng.gen(),
                },
                exhausted: rng.gen(),
                pinned_threads: rng.gen_range(0..64),
                huge_fraction: rng.gen_bool(0.5).then(&mut v),
                audit: AuditResult {
                    passed: rng.gen(),
                    capacity: rng.gen_range(0..1 << 30),
                    global_free: rng.gen_range(0..1 << 30),
                    cached: rng.gen_range(0..1 << 20),
                    allocated: rng.gen_range(0..1 << 20),
                    double_claims: rng.gen_bool(0.5).then(|| rng.gen()),
                },
            }
        })
        .collect();
    let summary = Summary {
        median_mops: rng.gen_bool(0.8).then(&mut v),
        min_mops: rng.gen_bool(0.8).then(&mut v),
        max_mops: rng.gen_bool(0.8).then(&mut v),
        counters_per_op: events
            .iter()
            .map(|&e| (e, rng.gen_bool(0.5).then(&mut v)))
            .collect(),
        memory_bound_pct: None,
        dram_latency_ns: None,
    };
    BenchReport {
        schema_version: turbomem::bench::SCHEMA_VERSION,
        config,
        host,
        status,
        error: (status == RunStatus::Error).then(|| "pool construction failed: \"x\"\n".into()),
        runs,
        summary,
    }
}

fn report_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let reports: Vec<BenchReport> = (0..rng.gen_range(1..4))
            .map(|_| random_report(&mut rng))
            .collect();
        let mut buf = Vec::new();
        emit_report(&reports, ReportFormat::Json, &mut buf).unwrap();
        let back = parse_report(std::str::from_utf8(&buf).unwrap()).unwrap();
        if back.reports != reports {
            return Fail(format!("report set {i} changed in round trip"));
        }
        let mut again = Vec::new();
        emit_report(&back.reports, ReportFormat::Json, &mut again).unwrap();
        if again != buf {
            return Fail(format!("report set {i} not byte-stable"));
        }
    }
    Pass("50 random report sets parse back equal and re-emit byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "conservation and uniqueness",
            conservation,
            Duration::from_secs(60),
        ),
        (
            "oracle equivalence",
            oracle_equivalence,
            Duration::from_secs(10),
        ),
        ("ABA stress", aba_stress, Duration::from_secs(30)),
        ("hysteresis exactness", hysteresis, Duration::from_secs(1)),
        ("alignment", alignment, Duration::from_secs(5)),
        (
            "huge-page promotion",
            huge_promotion,
            Duration::from_secs(5),
        ),
        (
            "relative throughput",
            throughput_ordering,
            Duration::from_secs(600),
        ),
        (
            "DTLB-miss ordering",
            dtlb_ordering,
            Duration::from_secs(600),
        ),
        (
            "report round trip",
            report_round_trip,
            Duration::from_secs(1),
        ),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Fail(msg)
        });
        let took = start.elapsed();
        let slow = if took > budget {
            format!(" [over {:.0?} budget]", budget)
        } else {
            String::new()
        };
        let (tag, detail) = match verdict {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} {tag} {name}: {detail} ({:.2?}){slow}", took);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
