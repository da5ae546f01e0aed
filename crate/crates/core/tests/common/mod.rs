//! Shared test support: the bitset reference pool, plus drivers and models
//! checked against it.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbomem::{
    GlobalOnlyPool, HugePolicy, LocalHandle, LockedRingPool, Pool, PoolConfig, PoolError,
    PoolHandler, SlotIndex,
};

/// Reference pool: one bit per slot, no caches, no ordering.
pub struct BitsetPool {
    held: Vec<u64>,
    capacity: usize,
    free: usize,
}

impl BitsetPool {
    pub fn new(capacity: usize) -> Self {
        BitsetPool {
            held: vec![0; capacity.div_ceil(64)],
            capacity,
            free: capacity,
        }
    }

    pub fn free_count(&self) -> usize {
        self.free
    }

    pub fn is_held(&self, s: SlotIndex) -> bool {
        self.held[s.index() / 64] >> (s.index() % 64) & 1 == 1
    }

    fn set(&mut self, s: SlotIndex, v: bool) {
        let (w, b) = (s.index() / 64, s.index() % 64);
        if v {
            self.held[w] |= 1 << b;
        } else {
            self.held[w] &= !(1 << b);
        }
    }

    /// Outcome of an alloc of `n` slots, without choosing which.
    pub fn can_alloc(&self, n: usize) -> Outcome {
        if n <= self.free {
            Outcome::Ok
        } else {
            Outcome::Exhausted
        }
    }

    /// Records slots handed out by the pool under test. Panics if any was
    /// already held: that would be a uniqueness violation.
    pub fn take(&mut self, slots: &[SlotIndex]) {
        for &s in slots {
            assert!(s.index() < self.capacity, "{s} out of range");
            assert!(!self.is_held(s), "{s} handed out twice");
            self.set(s, true);
        }
        self.free -= slots.len();
    }

    pub fn free(&mut self, s: SlotIndex) -> Outcome {
        self.free_bulk(&[s])
    }

    /// All-or-nothing release, checking range first and then each slot in
    /// order (a slot repeated in `slots` is a double free).
    pub fn free_bulk(&mut self, slots: &[SlotIndex]) -> Outcome {
        if slots.iter().any(|s| s.index() >= self.capacity) {
            return Outcome::InvalidSlot;
        }
        for (i, &s) in slots.iter().enumerate() {
            if !self.is_held(s) {
                for &r in &slots[..i] {
                    self.set(r, true);
                }
                return Outcome::DoubleFree;
            }
            self.set(s, false);
        }
        self.free += slots.len();
        Outcome::Ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Exhausted,
    DoubleFree,
    InvalidSlot,
}

impl Outcome {
    pub fn of<T>(r: &Result<T, PoolError>) -> Outcome {
        match r {
            Ok(_) => Outcome::Ok,
            Err(PoolError::PoolExhausted) => Outcome::Exhausted,
            Err(PoolError::DoubleFree(_)) => Outcome::DoubleFree,
            Err(PoolError::InvalidSlot(_)) => Outcome::InvalidSlot,
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

/// Runs a seeded random single-thread trace against `local`, checking every
/// outcome against the bitset pool. Returns the outcome sequence.
///
/// Operation choices depend only on the seed and on counts that the oracle
/// fixes, so equal seeds yield equal traces for every handler.
pub fn run_oracle_trace<L: LocalHandle>(
    local: &mut L,
    capacity: usize,
    seed: u64,
    ops: usize,
) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = BitsetPool::new(capacity);
    let mut held: Vec<SlotIndex> = Vec::new();
    let mut outcomes = Vec::with_capacity(ops);

    for _ in 0..ops {
        let roll = rng.gen_range(0..100);
        let outcome = if roll < 35 {
            let expect = oracle.can_alloc(1);
            let r = local.alloc();
            let got = Outcome::of(&r);
            assert_eq!(got, expect, "alloc");
            if let Ok(s) = r {
                oracle.take(&[s]);
                held.push(s);
            }
            got
        } else if roll < 65 {
            if held.is_empty() {
                continue;
            }
            let s = held.swap_remove(rng.gen_range(0..held.len()));
            let expect = oracle.free(s);
            let got = Outcome::of(&local.free(s));
            assert_eq!(got, expect, "free {s}");
            got
        } else if roll < 77 {
            let n = rng.gen_range(0..=capacity / 4);
            let expect = oracle.can_alloc(n);
            let r = local.alloc_bulk(n);
            let got = Outcome::of(&r);
            assert_eq!(got, expect, "alloc_bulk({n})");
            if let Ok(v) = r {
                assert_eq!(v.len(), n);
                oracle.take(&v);
                held.extend(v);
            }
            got
        } else if roll < 89 {
            let n = rng.gen_range(0..=held.len().min(capacity / 4));
            let mut batch = Vec::with_capacity(n);
            for _ in 0..n {
                batch.push(held.swap_remove(rng.gen_range(0..held.len())));
            }
            let expect = oracle.free_bulk(&batch);
            let got = Outcome::of(&local.free_bulk(&batch));
            assert_eq!(got, expect, "free_bulk");
            got
        } else if roll < 95 {
            // Free a held slot, then free it again.
            if held.is_empty() {
                continue;
            }
            let s = held.swap_remove(rng.gen_range(0..held.len()));
            let first = Outcome::of(&local.free(s));
            assert_eq!(first, oracle.free(s), "free {s}");
            outcomes.push(first);
            let expect = oracle.free(s);
            let got = Outcome::of(&local.free(s));
            assert_eq!(got, expect, "double free {s}");
            got
        } else if roll < 98 {
            // Bulk free where the last element repeats the first.
            if held.is_empty() {
                continue;
            }
            let k = rng.gen_range(1..=held.len().min(8));
            let mut batch: Vec<SlotIndex> = held[held.len() - k..].to_vec();
            batch.push(batch[0]);
            let expect = oracle.free_bulk(&batch);
            let got = Outcome::of(&local.free_bulk(&batch));
            assert_eq!(got, expect, "duplicate free_bulk");
            got
        } else {
            let s = SlotIndex::new((capacity + rng.gen_range(0..16)) as u32);
            let expect = oracle.free(s);
            let got = Outcome::of(&local.free(s));
            assert_eq!(got, expect, "out-of-range free");
            got
        };
        outcomes.push(outcome);
    }
    local.free_bulk(&held).expect("return remaining slots");
    outcomes
}

/// Step model of one thread cache in front of the global stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheModel {
    pub cap: usize,
    pub refill: usize,
    pub flush: usize,
    pub cached: usize,
    pub global: usize,
}

impl CacheModel {
    pub fn new(config: &PoolConfig) -> Self {
        CacheModel {
            cap: config.cache_capacity,
            refill: config.refill_batch,
            flush: config.flush_batch,
            cached: 0,
            global: config.capacity,
        }
    }

    pub fn alloc(&mut self) -> bool {
        if self.cached == 0 {
            let got = self.refill.min(self.global);
            if got == 0 {
                return false;
            }
            self.global -= got;
            self.cached = got;
        }
        self.cached -= 1;
        true
    }

    pub fn free(&mut self) {
        if self.cached == self.cap {
            self.cached -= self.flush;
            self.global += self.flush;
        }
        self.cached += 1;
    }

    pub fn alloc_bulk(&mut self, n: usize) -> bool {
        if n <= self.cached {
            self.cached -= n;
            return true;
        }
        let deficit = n - self.cached;
        let want = deficit.div_ceil(self.refill) * self.refill;
        let got = want.min(self.global);
        if got < deficit {
            return false;
        }
        self.global -= got;
        self.cached = got - deficit;
        true
    }

    pub fn free_bulk(&mut self, n: usize) {
        for _ in 0..n {
            self.free();
        }
    }
}

/// Small pool configuration shared by the multi-handler suites.
pub fn small_config(capacity: usize, cache: usize, threads: usize) -> PoolConfig {
    PoolConfig::new(64, capacity)
        .with_cache(cache)
        .with_max_threads(threads)
        .with_huge_policy(HugePolicy::PlainPages)
}

/// Conservation at quiescence, from the pool's own counters.
pub fn assert_conserved<H: PoolHandler>(pool: &H, held_by_workers: usize) {
    let st = pool.stats();
    assert_eq!(
        st.global_free + st.cached_total() + st.total_allocated,
        st.capacity,
        "{:?}: {st:?}",
        pool.kind()
    );
    assert_eq!(st.total_allocated, held_by_workers, "{:?}", pool.kind());
    assert_eq!(pool.double_claims().unwrap_or(0), 0);
}

pub fn handlers_build(config: &PoolConfig) -> (Pool, GlobalOnlyPool, LockedRingPool) {
    (
        Pool::create(config.clone()).unwrap(),
        GlobalOnlyPool::create(config).unwrap(),
        LockedRingPool::create(config).unwrap(),
    )
}

/// Outcome of a concurrent stress run.
#[derive(Debug, Default)]
pub struct StressSummary {
    pub ops: u64,
    pub exhausted: u64,
    pub checkpoints: usize,
}

/// `threads` workers each run `ops` random alloc/free/bulk operations,
/// split into `phases`. Between phases every worker parks on a barrier and
/// the coordinator checks conservation against the slots workers hold.
/// Every held slot carries an owner stamp that is verified before release.
pub fn stress<H: PoolHandler>(
    pool: &H,
    threads: usize,
    ops: u64,
    phases: u64,
    max_held: usize,
    seed: u64,
) -> StressSummary {
    use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
    use std::sync::Barrier;

    let barrier = Barrier::new(threads + 1);
    let held_total = AtomicUsize::new(0);
    let total_ops = AtomicU64::new(0);
    let exhausted = AtomicU64::new(0);
    let per_phase = ops / phases;

    let stamp = |s: SlotIndex, tid: usize| (tid as u64) << 32 | s.get() as u64;
    let write = |s: SlotIndex, tid: usize| {
        let p = pool.slot_address(s).unwrap().as_ptr() as *mut u64;
        // SAFETY: slot is held by this worker; objects are >= 8 bytes and
        // at least 64-byte aligned.
        unsafe { p.write_volatile(stamp(s, tid)) };
    };
    let check = |s: SlotIndex, tid: usize| {
        let p = pool.slot_address(s).unwrap().as_ptr() as *const u64;
        // SAFETY: as above.
        let got = unsafe { p.read_volatile() };
        assert_eq!(
            got,
            stamp(s, tid),
            "slot {s} overwritten while held by {tid}"
        );
    };

    let mut checkpoints = 0;
    std::thread::scope(|scope| {
        for tid in 0..threads {
            let (barrier, held_total, total_ops, exhausted) =
                (&barrier, &held_total, &total_ops, &exhausted);
            let (write, check) = (&write, &check);
            scope.spawn(move || {
                let mut local = pool.register().expect("register");
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((tid as u64 + 1) * 0x9e37_79b9));
                let mut held: Vec<SlotIndex> = Vec::new();
                let mut done = 0u64;
                let mut dry = 0u64;
                for _ in 0..phases {
                    for _ in 0..per_phase {
                        let roll = rng.gen_range(0..100);
                        let room = max_held.saturating_sub(held.len());
                        if roll < 40 && room > 0 {
                            match local.alloc() {
                                Ok(s) => {
                                    write(s, tid);
                                    held.push(s);
                                }
                                Err(PoolError::PoolExhausted) => dry += 1,
                                Err(e) => panic!("{e}"),
                            }
                        } else if roll < 80 && !held.is_empty() {
                            let s = held.swap_remove(rng.gen_range(0..held.len()));
                            check(s, tid);
                            local.free(s).unwrap();
                        } else if roll < 90 && room > 0 {
                            let n = rng.gen_range(1..=room.min(48));
                            match local.alloc_bulk(n) {
                                Ok(v) => {
                                    for &s in &v {
                                        write(s, tid);
                                    }
                                    held.extend(v);
                                }
                                Err(PoolError::PoolExhausted) => dry += 1,
                                Err(e) => panic!("{e}"),
                            }
                        } else if !held.is_empty() {
                            let n = rng.gen_range(1..=held.len());
                            let batch = held.split_off(held.len() - n);
                            for &s in &batch {
                                check(s, tid);
                            }
                            local.free_bulk(&batch).unwrap();
                        }
                        done += 1;
                    }
                    held_total.fetch_add(held.len(), Ordering::SeqCst);
                    barrier.wait();
                    barrier.wait();
                    held_total.fetch_sub(held.len(), Ordering::SeqCst);
                }
                for &s in &held {
                    check(s, tid);
                }
                local.free_bulk(&held).unwrap();
                total_ops.fetch_add(done, Ordering::Relaxed);
                exhausted.fetch_add(dry, Ordering::Relaxed);
            });
        }
        for _ in 0..phases {
            barrier.wait();
            assert_conserved(pool, held_total.load(Ordering::SeqCst));
            checkpoints += 1;
            barrier.wait();
        }
    });
    assert_conserved(pool, 0);
    StressSummary {
        ops: total_ops.into_inner(),
        exhausted: exhausted.into_inner(),
        checkpoints,
    }
}

/// Checks that the logged tags, sorted, strictly increase by one.
///
/// A worker records its tag after its CAS succeeds, so when the log fills
/// up mid-run each worker may have one tag in flight that never lands:
/// `max_missing` such holes are tolerated, duplicates never are.
pub fn tags_consecutive(tags: &[u32], max_missing: usize) -> bool {
    let mut t = tags.to_vec();
    t.sort_unstable();
    let mut missing = 0usize;
    for w in t.windows(2) {
        if w[1] <= w[0] {
            return false;
        }
        missing += (w[1] - w[0] - 1) as usize;
    }
    missing <= max_missing
}
