use std::ptr::NonNull;
use std::sync::atomic::AtomicU64;

use crate::config::stride_for;
use crate::error::PoolError;
use crate::region::MemoryRegion;
use crate::slot::SlotIndex;

/// Fixed-stride slot layout over a [`MemoryRegion`].
///
/// Slot `i` starts at `base + i * stride`, where `stride` is the object size
/// rounded up to the alignment. While a slot is free, its first 8 bytes hold
/// the next link of whichever free list currently owns it.
#[derive(Debug)]
pub struct SlotArena {
    region: MemoryRegion,
    capacity: usize,
    object_size: usize,
    alignment: usize,
    stride: usize,
}

impl SlotArena {
    pub fn new(
        region: MemoryRegion,
        object_size: usize,
        alignment: usize,
        capacity: usize,
    ) -> Result<Self, PoolError> {
        if region.is_released() {
            return Err(PoolError::RegionReleased);
        }
        let stride = stride_for(object_size, alignment);
        let needed = capacity * stride;
        if region.len() < needed {
            return Err(PoolError::RegionTooSmall {
                needed,
                available: region.len(),
            });
        }
        if !(region.base().as_ptr() as usize).is_multiple_of(alignment) {
            return Err(PoolError::RegionMisaligned(alignment));
        }
        Ok(SlotArena {
            region,
            capacity,
            object_size,
            alignment,
            stride,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn object_size(&self) -> usize {
        self.object_size
    }

    pub fn alignment(&self) -> usize {
        self.alignment
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn region(&self) -> &MemoryRegion {
        &self.region
    }

    pub fn into_region(self) -> MemoryRegion {
        self.region
    }

    #[inline]
    pub fn contains(&self, slot: SlotIndex) -> bool {
        slot.index() < self.capacity
    }

    /// Byte offset of `slot` from the region base.
    pub fn slot_offset(&self, slot: SlotIndex) -> Result<usize, PoolError> {
        if !self.contains(slot) {
            return Err(PoolError::InvalidSlot(slot));
        }
        Ok(slot.index() * self.stride)
    }

    /// Address of `slot`'s first byte; aligned to the configured alignment.
    pub fn slot_address(&self, slot: SlotIndex) -> Result<NonNull<u8>, PoolError> {
        let off = self.slot_offset(slot)?;
        // SAFETY: off + stride <= region length, checked at construction.
        Ok(unsafe { NonNull::new_unchecked(self.region.base().as_ptr().add(off)) })
    }

    /// Next-link word of a slot. The caller guarantees `slot` is in range.
    #[inline]
    pub(crate) fn link(&self, slot: SlotIndex) -> &AtomicU64 {
        debug_assert!(self.contains(slot));
        // SAFETY: in range, 64-byte aligned, and the region outlives &self.
        unsafe {
            &*(self
                .region
                .base()
                .as_ptr()
                .add(slot.index() * self.stride)
                .cast::<AtomicU64>())
        }
    }
}
