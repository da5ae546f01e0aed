//! The cached lock-free pool.
//!
//! Every free slot is either on the global [`GlobalStack`] or in exactly one
//! thread cache. A cache is a bounded LIFO touched only by the thread that
//! holds its [`ThreadHandle`]:
//!
//! * `alloc` pops from the cache; on a miss it first pulls up to
//!   `refill_batch` slots from the global stack (fewer is fine, none is
//!   [`PoolError::PoolExhausted`]).
//! * `free` pushes onto the cache; when the cache is already full it first
//!   returns its `flush_batch` oldest slots to the global stack in one chain.
//!
//! Cache hits perform no atomic read-modify-write on shared state, so the
//! fast path never contends. Caches live in a fixed table of registrations
//! rather than thread-local storage so [`ThreadHandle::drain`] can return
//! them explicitly and the slot can be reused by a later thread.

use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::arena::SlotArena;
use crate::audit::ClaimTable;
use crate::config::PoolConfig;
use crate::error::PoolError;
use crate::handler::{HandlerKind, LocalHandle, PoolHandler};
use crate::region::{reserve_region, MemoryRegion};
use crate::slot::{PackedHead, SlotIndex};
use crate::stack::GlobalStack;

/// Counter snapshot. Each field is read atomically, but the set is only a
/// consistent snapshot when no operation is in flight.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub capacity: usize,
    pub global_free: usize,
    /// Cached slots per registration (zero for unused registrations).
    pub per_thread_cached: Vec<usize>,
    pub total_allocated: usize,
    pub global_push_ops: u64,
    pub global_pop_ops: u64,
    pub cas_retries: u64,
}

impl PoolStats {
    pub fn cached_total(&self) -> usize {
        self.per_thread_cached.iter().sum()
    }

    /// `global_free + Σ cached + allocated == capacity`.
    pub fn is_conserved(&self) -> bool {
        self.global_free + self.cached_total() + self.total_allocated == self.capacity
    }
}

#[repr(align(128))]
struct Registration {
    active: AtomicBool,
    cache: UnsafeCell<Vec<SlotIndex>>,
    /// Mirror of `cache.len()` for `stats`; written by the owner only.
    cached: AtomicUsize,
    /// Net slots allocated through this registration; written by the owner
    /// only, so updates are a load + store rather than an RMW.
    allocated: AtomicI64,
}

impl Registration {
    fn new(cache_capacity: usize) -> Self {
        Registration {
            active: AtomicBool::new(false),
            cache: UnsafeCell::new(Vec::with_capacity(cache_capacity)),
            cached: AtomicUsize::new(0),
            allocated: AtomicI64::new(0),
        }
    }

    #[inline]
    fn add_allocated(&self, delta: i64) {
        let cur = self.allocated.load(Ordering::Relaxed);
        self.allocated.store(cur + delta, Ordering::Relaxed);
    }
}

pub struct Pool {
    config: PoolConfig,
    arena: SlotArena,
    global: GlobalStack,
    regs: Box<[Registration]>,
    /// Allocation balance carried over from drained registrations.
    retired_allocated: AtomicI64,
    claims: Option<ClaimTable>,
}

// SAFETY: a registration's cache is only accessed through the unique
// ThreadHandle that claimed it (the `active` flag hands it out once).
unsafe impl Sync for Pool {}
unsafe impl Send for Pool {}

impl Pool {
    /// Builds a pool over `region` with every slot on the global stack.
    pub fn new(config: PoolConfig, region: MemoryRegion) -> Result<Pool, PoolError> {
        config.validate()?;
        if region.policy() != config.huge_policy {
            return Err(PoolError::PolicyMismatch {
                region: region.policy(),
                config: config.huge_policy,
            });
        }
        let arena = SlotArena::new(
            region,
            config.object_size,
            config.alignment,
            config.capacity,
        )?;
        let global = GlobalStack::new(config.head_log_capacity);
        global.init_all(&arena);
        let regs = (0..config.max_threads)
            .map(|_| Registration::new(config.cache_capacity))
            .collect();
        let claims = config.audit.then(|| ClaimTable::new(config.capacity));
        Ok(Pool {
            config,
            arena,
            global,
            regs,
            retired_allocated: AtomicI64::new(0),
            claims,
        })
    }

    /// Reserves, advises and pre-faults a region sized for `config`, then
    /// builds the pool over it.
    pub fn create(config: PoolConfig) -> Result<Pool, PoolError> {
        config.validate()?;
        let region = prepare_region(&config)?;
        Pool::new(config, region)
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn region(&self) -> &MemoryRegion {
        self.arena.region()
    }

    /// Hands back the region for release. Consumes the pool, so no handle
    /// can outlive it.
    pub fn into_region(self) -> MemoryRegion {
        self.arena.into_region()
    }

    pub fn stride(&self) -> usize {
        self.arena.stride()
    }

    pub fn slot_address(&self, slot: SlotIndex) -> Result<NonNull<u8>, PoolError> {
        self.arena.slot_address(slot)
    }

    pub fn global_head(&self) -> PackedHead {
        self.global.head()
    }

    /// Tags installed on the global head, when the head log is enabled.
    pub fn head_log(&self) -> Option<Vec<u32>> {
        self.global.head_log()
    }

    pub fn register_thread(&self) -> Result<ThreadHandle<'_>, PoolError> {
        for (i, reg) in self.regs.iter().enumerate() {
            if reg
                .active
                .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
                .is_ok()
            {
                return Ok(ThreadHandle {
                    pool: self,
                    reg: i,
                    retired: false,
                    _not_send: PhantomData,
                });
            }
        }
        Err(PoolError::RegistrationLimit(self.regs.len()))
    }

    pub fn active_registrations(&self) -> usize {
        self.regs
            .iter()
            .filter(|r| r.active.load(Ordering::Relaxed))
            .count()
    }

    pub fn stats(&self) -> PoolStats {
        let per_thread_cached: Vec<usize> = self
            .regs
            .iter()
            .map(|r| r.cached.load(Ordering::Relaxed))
            .collect();
        let allocated: i64 = self.retired_allocated.load(Ordering::Relaxed)
            + self
                .regs
                .iter()
                .map(|r| r.allocated.load(Ordering::Relaxed))
                .sum::<i64>();
        PoolStats {
            capacity: self.config.capacity,
            global_free: self.global.free_count(),
            per_thread_cached,
            total_allocated: allocated.max(0) as usize,
            global_push_ops: self.global.push_ops(),
            global_pop_ops: self.global.pop_ops(),
            cas_retries: self.global.cas_retries(),
        }
    }

    pub fn claims(&self) -> Option<&ClaimTable> {
        self.claims.as_ref()
    }
}

pub(crate) fn prepare_region(config: &PoolConfig) -> Result<MemoryRegion, PoolError> {
    let region = reserve_region(
        config.region_len(),
        config.alignment,
        config.huge_policy,
        config.numa_node,
    )?;
    if config.huge_policy.wants_huge() {
        region.advise_huge()?;
    }
    region.touch_pages(config.numa_node)?;
    Ok(region)
}

/// A thread's registration with a [`Pool`]. Owns one cache; neither `Send`
/// nor `Sync`. Dropping it drains the cache.
pub struct ThreadHandle<'p> {
    pool: &'p Pool,
    reg: usize,
    retired: bool,
    _not_send: PhantomData<*mut ()>,
}

impl<'p> ThreadHandle<'p> {
    #[inline]
    fn parts(&self) -> Result<(&'p Pool, &'p Registration, &'p mut Vec<SlotIndex>), PoolError> {
        if self.retired {
            return Err(PoolError::HandleRetired);
        }
        let pool = self.pool;
        let reg = &pool.regs[self.reg];
        // SAFETY: this handle is the only live user of `reg` (claimed via
        // `active`), it is !Send, and each method takes `&mut self`, so no
        // two references to the cache coexist.
        let cache = unsafe { &mut *reg.cache.get() };
        Ok((pool, reg, cache))
    }

    /// Registration index of this handle.
    pub fn id(&self) -> usize {
        self.reg
    }

    pub fn cached_count(&self) -> usize {
        self.pool.regs[self.reg].cached.load(Ordering::Relaxed)
    }

    pub fn is_retired(&self) -> bool {
        self.retired
    }

    pub fn alloc(&mut self) -> Result<SlotIndex, PoolError> {
        let (pool, reg, cache) = self.parts()?;
        let slot = match cache.pop() {
            Some(s) => s,
            None => {
                let got = pool
                    .global
                    .pop_into(&pool.arena, pool.config.refill_batch, cache);
                if got == 0 {
                    return Err(PoolError::PoolExhausted);
                }
                // Keep the global stack's top (most recently freed) on top.
                cache.reverse();
                cache.pop().expect("refilled")
            }
        };
        reg.cached.store(cache.len(), Ordering::Relaxed);
        reg.add_allocated(1);
        if let Some(claims) = &pool.claims {
            claims.claim(slot);
        }
        Ok(slot)
    }

    /// Returns `slot` to this thread's cache.
    ///
    /// Freeing a slot twice is detected only in audit mode; otherwise it
    /// puts the slot on a free list twice and the pool's behavior is
    /// undefined from then on.
    pub fn free(&mut self, slot: SlotIndex) -> Result<(), PoolError> {
        let (pool, reg, cache) = self.parts()?;
        if !pool.arena.contains(slot) {
            return Err(PoolError::InvalidSlot(slot));
        }
        if let Some(claims) = &pool.claims {
            claims.release(slot)?;
        }
        let cap = pool.config.cache_capacity;
        if cache.len() == cap {
            let flush = pool.config.flush_batch;
            let oldest = &mut cache[..flush];
            oldest.reverse();
            pool.global.push_chain(&pool.arena, oldest);
            cache.drain(..flush);
        }
        cache.push(slot);
        reg.cached.store(cache.len(), Ordering::Relaxed);
        reg.add_allocated(-1);
        Ok(())
    }

    pub fn alloc_bulk(&mut self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let (pool, reg, cache) = self.parts()?;
        let cached = cache.len();
        let out = if n <= cached {
            cache.split_off(cached - n)
        } else {
            let deficit = n - cached;
            let refill = pool.config.refill_batch;
            let want = deficit.div_ceil(refill) * refill;
            let mut fresh = Vec::with_capacity(want);
            let got = pool.global.pop_into(&pool.arena, want, &mut fresh);
            if got < deficit {
                if got > 0 {
                    pool.global.push_chain(&pool.arena, &fresh);
                }
                return Err(PoolError::PoolExhausted);
            }
            let leftover = fresh.split_off(deficit);
            let mut out: Vec<SlotIndex> = std::mem::take(cache);
            out.extend_from_slice(&fresh);
            cache.extend(leftover.into_iter().rev());
            out
        };
        reg.cached.store(cache.len(), Ordering::Relaxed);
        reg.add_allocated(n as i64);
        if let Some(claims) = &pool.claims {
            claims.claim_all(&out);
        }
        Ok(out)
    }

    /// Equivalent to freeing each slot in order, but all overflow is
    /// returned to the global stack as one chain.
    pub fn free_bulk(&mut self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        if slots.is_empty() {
            return Ok(());
        }
        let (pool, reg, cache) = self.parts()?;
        if let Some(&bad) = slots.iter().find(|s| !pool.arena.contains(**s)) {
            return Err(PoolError::InvalidSlot(bad));
        }
        if let Some(claims) = &pool.claims {
            claims.release_all(slots)?;
        }

        let cap = pool.config.cache_capacity;
        let flush = pool.config.flush_batch;
        let mut count = cache.len();
        let mut flushes = 0;
        for _ in slots {
            if count == cap {
                count -= flush;
                flushes += 1;
            }
            count += 1;
        }

        let to_flush = flushes * flush;
        if to_flush == 0 {
            cache.extend_from_slice(slots);
        } else {
            // Repeated frees flush oldest-first out of `cache ++ slots`.
            let from_cache = to_flush.min(cache.len());
            let from_new = to_flush - from_cache;
            let mut chain: Vec<SlotIndex> = cache.drain(..from_cache).collect();
            chain.extend_from_slice(&slots[..from_new]);
            chain.reverse();
            pool.global.push_chain(&pool.arena, &chain);
            cache.extend_from_slice(&slots[from_new..]);
        }
        debug_assert_eq!(cache.len(), count);
        reg.cached.store(cache.len(), Ordering::Relaxed);
        reg.add_allocated(-(slots.len() as i64));
        Ok(())
    }

    /// Returns every cached slot to the global stack and retires the
    /// handle. The registration becomes available to `register_thread`.
    pub fn drain(&mut self) {
        let Ok((pool, reg, cache)) = self.parts() else {
            return;
        };
        pool.global.push_chain(&pool.arena, cache);
        cache.clear();
        reg.cached.store(0, Ordering::Relaxed);
        let balance = reg.allocated.swap(0, Ordering::Relaxed);
        pool.retired_allocated.fetch_add(balance, Ordering::Relaxed);
        self.retired = true;
        reg.active.store(false, Ordering::Release);
    }
}

impl Drop for ThreadHandle<'_> {
    fn drop(&mut self) {
        self.drain();
    }
}

impl LocalHandle for ThreadHandle<'_> {
    fn alloc(&mut self) -> Result<SlotIndex, PoolError> {
        ThreadHandle::alloc(self)
    }

    fn free(&mut self, slot: SlotIndex) -> Result<(), PoolError> {
        ThreadHandle::free(self, slot)
    }

    fn alloc_bulk(&mut self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        ThreadHandle::alloc_bulk(self, n)
    }

    fn free_bulk(&mut self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        ThreadHandle::free_bulk(self, slots)
    }
}

impl PoolHandler for Pool {
    type Local<'a> = ThreadHandle<'a>;

    fn kind(&self) -> HandlerKind {
        HandlerKind::TurboMem
    }

    fn register(&self) -> Result<ThreadHandle<'_>, PoolError> {
        self.register_thread()
    }

    fn arena(&self) -> &SlotArena {
        &self.arena
    }

    fn stats(&self) -> PoolStats {
        Pool::stats(self)
    }

    fn double_claims(&self) -> Option<u64> {
        self.claims.as_ref().map(ClaimTable::double_claims)
    }
}
