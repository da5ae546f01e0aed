use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of one fixed-size slot in a pool's backing region.
///
/// Slots are addressed by index rather than pointer so the global stack head
/// can carry an index and a generation tag in a single 64-bit word.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(transparent)]
pub struct SlotIndex(u32);

impl SlotIndex {
    /// Sentinel for "no slot" (empty stack, end of chain).
    pub const NIL: SlotIndex = SlotIndex(u32::MAX);

    /// Largest pool capacity representable next to the sentinel.
    pub const MAX_CAPACITY: usize = u32::MAX as usize - 1;

    #[inline]
    pub const fn new(value: u32) -> Self {
        SlotIndex(value)
    }

    #[inline]
    pub const fn get(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub const fn is_nil(self) -> bool {
        self.0 == u32::MAX
    }
}

impl From<u32> for SlotIndex {
    fn from(v: u32) -> Self {
        SlotIndex(v)
    }
}

impl fmt::Debug for SlotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_nil() {
            f.write_str("SlotIndex(NIL)")
        } else {
            write!(f, "SlotIndex({})", self.0)
        }
    }
}

impl fmt::Display for SlotIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_nil() {
            f.write_str("NIL")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Head of the global free stack: top slot in the low 32 bits, generation
/// tag in the high 32 bits.
///
/// Every successful head replacement installs `tag + 1`, so a CAS that read
/// a head before an intervening pop/push sequence fails even if the same
/// slot index is on top again.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PackedHead {
    pub top: SlotIndex,
    pub tag: u32,
}

impl PackedHead {
    pub const EMPTY: PackedHead = PackedHead {
        top: SlotIndex::NIL,
        tag: 0,
    };

    #[inline]
    pub const fn pack(self) -> u64 {
        ((self.tag as u64) << 32) | self.top.0 as u64
    }

    #[inline]
    pub const fn unpack(word: u64) -> Self {
        PackedHead {
            top: SlotIndex(word as u32),
            tag: (word >> 32) as u32,
        }
    }

    /// The head that replaces `self` when `top` becomes the new top.
    #[inline]
    pub const fn successor(self, top: SlotIndex) -> Self {
        PackedHead {
            top,
            tag: self.tag.wrapping_add(1),
        }
    }
}
