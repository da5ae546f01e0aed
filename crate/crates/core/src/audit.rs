//! Per-slot claim stamps for audit mode.
//!
//! Each slot carries an epoch counter: even while free, odd while held.
//! Claiming bumps even → odd, releasing odd → even. A claim that finds an odd
//! stamp means two holders got the same slot; a release that finds an even
//! stamp is a double free. Without audit mode a double free is undefined
//! behavior of the pool (the slot ends up on a free list twice).

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crate::error::PoolError;
use crate::slot::SlotIndex;

#[derive(Debug)]
pub struct ClaimTable {
    stamps: Box<[AtomicU32]>,
    double_claims: AtomicU64,
}

impl ClaimTable {
    pub fn new(capacity: usize) -> Self {
        ClaimTable {
            stamps: (0..capacity).map(|_| AtomicU32::new(0)).collect(),
            double_claims: AtomicU64::new(0),
        }
    }

    /// Marks `slot` held. Records a violation if it already was.
    #[inline]
    pub fn claim(&self, slot: SlotIndex) {
        let prev = self.stamps[slot.index()].fetch_add(1, Ordering::AcqRel);
        if prev & 1 == 1 {
            self.double_claims.fetch_add(1, Ordering::Relaxed);
            log::error!("slot {slot} claimed while already held");
        }
    }

    pub fn claim_all(&self, slots: &[SlotIndex]) {
        slots.iter().for_each(|&s| self.claim(s));
    }

    /// Marks `slot` free, or reports a double free and leaves it untouched.
    #[inline]
    pub fn release(&self, slot: SlotIndex) -> Result<(), PoolError> {
        let stamp = &self.stamps[slot.index()];
        let cur = stamp.load(Ordering::Acquire);
        if cur & 1 == 0
            || stamp
                .compare_exchange(
                    cur,
                    cur.wrapping_add(1),
                    Ordering::AcqRel,
                    Ordering::Acquire,
                )
                .is_err()
        {
            return Err(PoolError::DoubleFree(slot));
        }
        Ok(())
    }

    /// Releases every slot or none: on the first double free, re-claims the
    /// slots already released by this call.
    pub fn release_all(&self, slots: &[SlotIndex]) -> Result<(), PoolError> {
        for (i, &s) in slots.iter().enumerate() {
            if let Err(e) = self.release(s) {
                for &done in &slots[..i] {
                    self.stamps[done.index()].fetch_add(1, Ordering::AcqRel);
                }
                return Err(e);
            }
        }
        Ok(())
    }

    pub fn is_held(&self, slot: SlotIndex) -> bool {
        self.stamps[slot.index()].load(Ordering::Acquire) & 1 == 1
    }

    pub fn double_claims(&self) -> u64 {
        self.double_claims.load(Ordering::Relaxed)
    }

    pub fn held_count(&self) -> usize {
        self.stamps
            .iter()
            .filter(|s| s.load(Ordering::Relaxed) & 1 == 1)
            .count()
    }
}
