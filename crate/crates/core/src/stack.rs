//! Lock-free Treiber stack of free slots, threaded through the slots
//! themselves.

use std::hint;
use std::ops::Deref;
use std::sync::atomic::{AtomicIsize, AtomicU32, AtomicU64, AtomicUsize, Ordering};

use crate::arena::SlotArena;
use crate::slot::{PackedHead, SlotIndex};

/// Aligns its contents to two cache lines (adjacent-line prefetch pairs).
#[derive(Debug, Default)]
#[repr(align(128))]
pub(crate) struct CachePadded<T>(pub T);

impl<T> Deref for CachePadded<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.0
    }
}

/// Bounded exponential spin for CAS retries. Never yields or sleeps.
struct Backoff {
    step: u32,
}

impl Backoff {
    const MAX_STEP: u32 = 6;

    fn new() -> Self {
        Backoff { step: 0 }
    }

    fn spin(&mut self) {
        for _ in 0..1u32 << self.step {
            hint::spin_loop();
        }
        if self.step < Self::MAX_STEP {
            self.step += 1;
        }
    }
}

/// Fixed-size record of the tags installed by successful head CASes.
#[derive(Debug)]
struct HeadLog {
    tags: Box<[AtomicU32]>,
    len: AtomicUsize,
}

impl HeadLog {
    fn new(capacity: usize) -> Self {
        HeadLog {
            tags: (0..capacity).map(|_| AtomicU32::new(0)).collect(),
            len: AtomicUsize::new(0),
        }
    }

    fn record(&self, tag: u32) {
        let i = self.len.fetch_add(1, Ordering::Relaxed);
        if let Some(cell) = self.tags.get(i) {
            cell.store(tag, Ordering::Relaxed);
        }
    }

    fn snapshot(&self) -> Vec<u32> {
        let n = self.len.load(Ordering::Acquire).min(self.tags.len());
        self.tags[..n]
            .iter()
            .map(|t| t.load(Ordering::Relaxed))
            .collect()
    }
}

#[derive(Debug)]
pub struct GlobalStack {
    head: CachePadded<AtomicU64>,
    free: CachePadded<AtomicIsize>,
    push_ops: AtomicU64,
    pop_ops: AtomicU64,
    cas_retries: AtomicU64,
    log: Option<HeadLog>,
}

impl GlobalStack {
    pub fn new(head_log_capacity: usize) -> Self {
        GlobalStack {
            head: CachePadded(AtomicU64::new(PackedHead::EMPTY.pack())),
            free: CachePadded(AtomicIsize::new(0)),
            push_ops: AtomicU64::new(0),
            pop_ops: AtomicU64::new(0),
            cas_retries: AtomicU64::new(0),
            log: (head_log_capacity > 0).then(|| HeadLog::new(head_log_capacity)),
        }
    }

    /// Links slots `0..capacity` in order with slot 0 on top, tag 0.
    /// Requires exclusive access (construction time).
    pub fn init_all(&self, arena: &SlotArena) {
        let cap = arena.capacity();
        for i in 0..cap {
            let next = if i + 1 < cap {
                SlotIndex::new(i as u32 + 1)
            } else {
                SlotIndex::NIL
            };
            arena
                .link(SlotIndex::new(i as u32))
                .store(next.get() as u64, Ordering::Relaxed);
        }
        let top = if cap > 0 {
            SlotIndex::new(0)
        } else {
            SlotIndex::NIL
        };
        self.head
            .store(PackedHead { top, tag: 0 }.pack(), Ordering::Release);
        self.free.store(cap as isize, Ordering::Relaxed);
    }

    pub fn head(&self) -> PackedHead {
        PackedHead::unpack(self.head.load(Ordering::Acquire))
    }

    /// Free-slot count. Exact only at quiescence.
    pub fn free_count(&self) -> usize {
        self.free.load(Ordering::Relaxed).max(0) as usize
    }

    pub fn push_ops(&self) -> u64 {
        self.push_ops.load(Ordering::Relaxed)
    }

    pub fn pop_ops(&self) -> u64 {
        self.pop_ops.load(Ordering::Relaxed)
    }

    pub fn cas_retries(&self) -> u64 {
        self.cas_retries.load(Ordering::Relaxed)
    }

    /// Tags installed by successful CASes, in log order, when logging is on.
    pub fn head_log(&self) -> Option<Vec<u32>> {
        self.log.as_ref().map(HeadLog::snapshot)
    }

    #[inline]
    fn installed(&self, head: PackedHead) {
        if let Some(log) = &self.log {
            log.record(head.tag);
        }
    }

    /// Pushes `slots` as one pre-linked chain with a single successful CAS.
    /// `slots[0]` becomes the new top.
    pub fn push_chain(&self, arena: &SlotArena, slots: &[SlotIndex]) {
        let Some((&last, _)) = slots.split_last() else {
            return;
        };
        for pair in slots.windows(2) {
            arena
                .link(pair[0])
                .store(pair[1].get() as u64, Ordering::Relaxed);
        }
        let first = slots[0];
        let mut backoff = Backoff::new();
        let mut current = self.head.load(Ordering::Relaxed);
        loop {
            let old = PackedHead::unpack(current);
            arena
                .link(last)
                .store(old.top.get() as u64, Ordering::Relaxed);
            let new = old.successor(first);
            match self.head.compare_exchange_weak(
                current,
                new.pack(),
                Ordering::Release,
                Ordering::Relaxed,
            ) {
                Ok(_) => {
                    self.installed(new);
                    break;
                }
                Err(seen) => {
                    current = seen;
                    self.cas_retries.fetch_add(1, Ordering::Relaxed);
                    backoff.spin();
                }
            }
        }
        self.push_ops.fetch_add(1, Ordering::Relaxed);
        self.free.fetch_add(slots.len() as isize, Ordering::Relaxed);
    }

    pub fn push(&self, arena: &SlotArena, slot: SlotIndex) {
        self.push_chain(arena, std::slice::from_ref(&slot));
    }

    /// Detaches the top slot, or `None` when the stack is empty.
    pub fn pop(&self, arena: &SlotArena) -> Option<SlotIndex> {
        let mut backoff = Backoff::new();
        let mut current = self.head.load(Ordering::Acquire);
        loop {
            let old = PackedHead::unpack(current);
            if old.top.is_nil() {
                return None;
            }
            // The link may be stale if another thread popped `old.top` in
            // the meantime; the tag makes the CAS below fail in that case.
            let next = SlotIndex::new(arena.link(old.top).load(Ordering::Relaxed) as u32);
            let new = old.successor(next);
            match self.head.compare_exchange_weak(
                current,
                new.pack(),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    self.installed(new);
                    self.pop_ops.fetch_add(1, Ordering::Relaxed);
                    self.free.fetch_sub(1, Ordering::Relaxed);
                    return Some(old.top);
                }
                Err(seen) => {
                    current = seen;
                    self.cas_retries.fetch_add(1, Ordering::Relaxed);
                    backoff.spin();
                }
            }
        }
    }

    /// Pops up to `n` slots one at a time into `out`; returns how many.
    pub fn pop_into(&self, arena: &SlotArena, n: usize, out: &mut Vec<SlotIndex>) -> usize {
        let mut got = 0;
        while got < n {
            match self.pop(arena) {
                Some(s) => {
                    out.push(s);
                    got += 1;
                }
                None => break,
            }
        }
        got
    }
}
