//! Comparison handlers without per-thread caches.
//!
//! [`LockedRingPool`] stands in for a ring-based mempool handler: one FIFO
//! ring of free slots behind a single mutex. It is a semantic stand-in, not
//! a multi-producer/multi-consumer CAS ring. [`GlobalOnlyPool`] is the
//! stack-based handler: the same tagged Treiber stack the cached pool uses,
//! hit on every operation.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use crate::arena::SlotArena;
use crate::audit::ClaimTable;
use crate::config::PoolConfig;
use crate::error::PoolError;
use crate::handler::{HandlerKind, LocalHandle, PoolHandler};
use crate::pool::{prepare_region, PoolStats};
use crate::region::MemoryRegion;
use crate::slot::{PackedHead, SlotIndex};
use crate::stack::GlobalStack;

fn arena_for(config: &PoolConfig, region: MemoryRegion) -> Result<SlotArena, PoolError> {
    if config.object_size < crate::config::LINK_BYTES {
        return Err(PoolError::ObjectTooSmall(config.object_size));
    }
    if !config.alignment.is_power_of_two() || config.alignment < crate::config::MIN_ALIGNMENT {
        return Err(PoolError::InvalidAlignment(config.alignment));
    }
    if config.capacity == 0 || config.capacity > SlotIndex::MAX_CAPACITY {
        return Err(PoolError::InvalidCapacity {
            got: config.capacity,
            max: SlotIndex::MAX_CAPACITY,
        });
    }
    SlotArena::new(
        region,
        config.object_size,
        config.alignment,
        config.capacity,
    )
}

struct Ring {
    buf: Box<[SlotIndex]>,
    head: usize,
    len: usize,
}

impl Ring {
    fn full(capacity: usize) -> Self {
        Ring {
            buf: (0..capacity as u32).map(SlotIndex::new).collect(),
            head: 0,
            len: capacity,
        }
    }

    fn pop(&mut self) -> Option<SlotIndex> {
        if self.len == 0 {
            return None;
        }
        let s = self.buf[self.head];
        self.head = (self.head + 1) % self.buf.len();
        self.len -= 1;
        Some(s)
    }

    fn push(&mut self, slot: SlotIndex) {
        debug_assert!(self.len < self.buf.len(), "ring overflow");
        let tail = (self.head + self.len) % self.buf.len();
        self.buf[tail] = slot;
        self.len += 1;
    }
}

pub struct LockedRingPool {
    arena: SlotArena,
    ring: Mutex<Ring>,
    free_mirror: AtomicUsize,
    gets: AtomicU64,
    puts: AtomicU64,
    contended: AtomicU64,
    claims: Option<ClaimTable>,
}

impl LockedRingPool {
    /// Uses `object_size`, `alignment`, `capacity` and `audit` from `config`.
    pub fn new(config: &PoolConfig, region: MemoryRegion) -> Result<Self, PoolError> {
        let arena = arena_for(config, region)?;
        let capacity = arena.capacity();
        Ok(LockedRingPool {
            arena,
            ring: Mutex::new(Ring::full(capacity)),
            free_mirror: AtomicUsize::new(capacity),
            gets: AtomicU64::new(0),
            puts: AtomicU64::new(0),
            contended: AtomicU64::new(0),
            claims: config.audit.then(|| ClaimTable::new(capacity)),
        })
    }

    pub fn create(config: &PoolConfig) -> Result<Self, PoolError> {
        Self::new(config, prepare_region(config)?)
    }

    pub fn into_region(self) -> MemoryRegion {
        self.arena.into_region()
    }

    fn lock(&self) -> MutexGuard<'_, Ring> {
        match self.ring.try_lock() {
            Ok(g) => g,
            Err(_) => {
                self.contended.fetch_add(1, Ordering::Relaxed);
                self.ring.lock().unwrap_or_else(|e| e.into_inner())
            }
        }
    }

    pub fn alloc(&self) -> Result<SlotIndex, PoolError> {
        let slot = {
            let mut ring = self.lock();
            let s = ring.pop().ok_or(PoolError::PoolExhausted)?;
            self.free_mirror.store(ring.len, Ordering::Relaxed);
            s
        };
        self.gets.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = &self.claims {
            c.claim(slot);
        }
        Ok(slot)
    }

    pub fn free(&self, slot: SlotIndex) -> Result<(), PoolError> {
        if !self.arena.contains(slot) {
            return Err(PoolError::InvalidSlot(slot));
        }
        if let Some(c) = &self.claims {
            c.release(slot)?;
        }
        let mut ring = self.lock();
        ring.push(slot);
        self.free_mirror.store(ring.len, Ordering::Relaxed);
        drop(ring);
        self.puts.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn alloc_bulk(&self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let out = {
            let mut ring = self.lock();
            if ring.len < n {
                return Err(PoolError::PoolExhausted);
            }
            let out: Vec<SlotIndex> = (0..n).map(|_| ring.pop().expect("checked")).collect();
            self.free_mirror.store(ring.len, Ordering::Relaxed);
            out
        };
        self.gets.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = &self.claims {
            c.claim_all(&out);
        }
        Ok(out)
    }

    pub fn free_bulk(&self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        if slots.is_empty() {
            return Ok(());
        }
        if let Some(&bad) = slots.iter().find(|s| !self.arena.contains(**s)) {
            return Err(PoolError::InvalidSlot(bad));
        }
        if let Some(c) = &self.claims {
            c.release_all(slots)?;
        }
        let mut ring = self.lock();
        for &s in slots {
            ring.push(s);
        }
        self.free_mirror.store(ring.len, Ordering::Relaxed);
        drop(ring);
        self.puts.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

pub struct LockedRingLocal<'a>(&'a LockedRingPool);

impl LocalHandle for LockedRingLocal<'_> {
    fn alloc(&mut self) -> Result<SlotIndex, PoolError> {
        self.0.alloc()
    }
    fn free(&mut self, slot: SlotIndex) -> Result<(), PoolError> {
        self.0.free(slot)
    }
    fn alloc_bulk(&mut self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        self.0.alloc_bulk(n)
    }
    fn free_bulk(&mut self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        self.0.free_bulk(slots)
    }
}

impl PoolHandler for LockedRingPool {
    type Local<'a> = LockedRingLocal<'a>;

    fn kind(&self) -> HandlerKind {
        HandlerKind::LockedRing
    }

    fn register(&self) -> Result<LockedRingLocal<'_>, PoolError> {
        Ok(LockedRingLocal(self))
    }

    fn arena(&self) -> &SlotArena {
        &self.arena
    }

    /// Ring pops/pushes are reported as global ops; `cas_retries` counts
    /// lock acquisitions that found the mutex held.
    fn stats(&self) -> PoolStats {
        let free = self.free_mirror.load(Ordering::Relaxed);
        let capacity = self.arena.capacity();
        PoolStats {
            capacity,
            global_free: free,
            per_thread_cached: Vec::new(),
            total_allocated: capacity.saturating_sub(free),
            global_push_ops: self.puts.load(Ordering::Relaxed),
            global_pop_ops: self.gets.load(Ordering::Relaxed),
            cas_retries: self.contended.load(Ordering::Relaxed),
        }
    }

    fn double_claims(&self) -> Option<u64> {
        self.claims.as_ref().map(ClaimTable::double_claims)
    }
}

pub struct GlobalOnlyPool {
    arena: SlotArena,
    global: GlobalStack,
    claims: Option<ClaimTable>,
}

impl GlobalOnlyPool {
    /// Uses `object_size`, `alignment`, `capacity`, `audit` and
    /// `head_log_capacity` from `config`.
    pub fn new(config: &PoolConfig, region: MemoryRegion) -> Result<Self, PoolError> {
        let arena = arena_for(config, region)?;
        let global = GlobalStack::new(config.head_log_capacity);
        global.init_all(&arena);
        let claims = config.audit.then(|| ClaimTable::new(arena.capacity()));
        Ok(GlobalOnlyPool {
            arena,
            global,
            claims,
        })
    }

    pub fn create(config: &PoolConfig) -> Result<Self, PoolError> {
        Self::new(config, prepare_region(config)?)
    }

    pub fn into_region(self) -> MemoryRegion {
        self.arena.into_region()
    }

    pub fn global_head(&self) -> PackedHead {
        self.global.head()
    }

    pub fn head_log(&self) -> Option<Vec<u32>> {
        self.global.head_log()
    }

    pub fn alloc(&self) -> Result<SlotIndex, PoolError> {
        let slot = self
            .global
            .pop(&self.arena)
            .ok_or(PoolError::PoolExhausted)?;
        if let Some(c) = &self.claims {
            c.claim(slot);
        }
        Ok(slot)
    }

    pub fn free(&self, slot: SlotIndex) -> Result<(), PoolError> {
        if !self.arena.contains(slot) {
            return Err(PoolError::InvalidSlot(slot));
        }
        if let Some(c) = &self.claims {
            c.release(slot)?;
        }
        self.global.push(&self.arena, slot);
        Ok(())
    }

    pub fn alloc_bulk(&self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(n);
        if self.global.pop_into(&self.arena, n, &mut out) < n {
            self.global.push_chain(&self.arena, &out);
            return Err(PoolError::PoolExhausted);
        }
        if let Some(c) = &self.claims {
            c.claim_all(&out);
        }
        Ok(out)
    }

    pub fn free_bulk(&self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        if slots.is_empty() {
            return Ok(());
        }
        if let Some(&bad) = slots.iter().find(|s| !self.arena.contains(**s)) {
            return Err(PoolError::InvalidSlot(bad));
        }
        if let Some(c) = &self.claims {
            c.release_all(slots)?;
        }
        self.global.push_chain(&self.arena, slots);
        Ok(())
    }
}

pub struct GlobalOnlyLocal<'a>(&'a GlobalOnlyPool);

impl LocalHandle for GlobalOnlyLocal<'_> {
    fn alloc(&mut self) -> Result<SlotIndex, PoolError> {
        self.0.alloc()
    }
    fn free(&mut self, slot: SlotIndex) -> Result<(), PoolError> {
        self.0.free(slot)
    }
    fn alloc_bulk(&mut self, n: usize) -> Result<Vec<SlotIndex>, PoolError> {
        self.0.alloc_bulk(n)
    }
    fn free_bulk(&mut self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        self.0.free_bulk(slots)
    }
}

impl PoolHandler for GlobalOnlyPool {
    type Local<'a> = GlobalOnlyLocal<'a>;

    fn kind(&self) -> HandlerKind {
        HandlerKind::GlobalOnly
    }

    fn register(&self) -> Result<GlobalOnlyLocal<'_>, PoolError> {
        Ok(GlobalOnlyLocal(self))
    }

    fn arena(&self) -> &SlotArena {
        &self.arena
    }

    fn stats(&self) -> PoolStats {
        let capacity = self.arena.capacity();
        let free = self.global.free_count();
        PoolStats {
            capacity,
            global_free: free,
            per_thread_cached: Vec::new(),
            total_allocated: capacity.saturating_sub(free),
            global_push_ops: self.global.push_ops(),
            global_pop_ops: self.global.pop_ops(),
            cas_retries: self.global.cas_retries(),
        }
    }

    fn double_claims(&self) -> Option<u64> {
        self.claims.as_ref().map(ClaimTable::double_claims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HugePolicy;

    fn cfg(capacity: usize) -> PoolConfig {
        PoolConfig::new(64, capacity)
            .with_cache(1)
            .with_max_threads(1)
            .with_huge_policy(HugePolicy::PlainPages)
            .with_audit(true)
    }

    #[test]
    fn locked_ring_exhausts() {
        let p = LockedRingPool::create(&cfg(2)).unwrap();
        let a = p.alloc().unwrap();
        let b = p.alloc().unwrap();
        assert_ne!(a, b);
        assert_eq!(p.alloc(), Err(PoolError::PoolExhausted));
    }

    #[test]
    fn locked_ring_is_fifo() {
        let p = LockedRingPool::create(&cfg(4)).unwrap();
        let all = p.alloc_bulk(4).unwrap();
        assert_eq!(all, (0..4).map(SlotIndex::new).collect::<Vec<_>>());
        p.free(all[2]).unwrap();
        p.free(all[0]).unwrap();
        assert_eq!(p.alloc().unwrap(), all[2]);
        assert_eq!(p.alloc().unwrap(), all[0]);
    }

    #[test]
    fn global_only_is_lifo() {
        let p = GlobalOnlyPool::create(&cfg(4)).unwrap();
        let a = p.alloc().unwrap();
        let b = p.alloc().unwrap();
        p.free(a).unwrap();
        assert_eq!(p.alloc().unwrap(), a);
        p.free(b).unwrap();
        assert_eq!(p.free(b), Err(PoolError::DoubleFree(b)));
    }

    #[test]
    fn bulk_all_or_nothing() {
        let g = GlobalOnlyPool::create(&cfg(8)).unwrap();
        let r = LockedRingPool::create(&cfg(8)).unwrap();
        let _g3 = g.alloc_bulk(3).unwrap();
        let _r3 = r.alloc_bulk(3).unwrap();
        assert_eq!(g.alloc_bulk(6), Err(PoolError::PoolExhausted));
        assert_eq!(r.alloc_bulk(6), Err(PoolError::PoolExhausted));
        assert_eq!(g.stats().global_free, 5);
        assert_eq!(r.stats().global_free, 5);
        assert!(g.stats().is_conserved());
        assert!(r.stats().is_conserved());
    }
}
