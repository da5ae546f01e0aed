//! The handler interface shared by the pool and both baselines, so stress
//! suites and the benchmark are generic over the implementation.

use std::fmt;
use std::ptr::NonNull;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arena::SlotArena;
use crate::error::PoolError;
use crate::pool::PoolStats;
use crate::slot::SlotIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HandlerKind {
    /// Global lock-free stack fronted by per-thread caches.
    TurboMem,
    /// The same global stack, no caches.
    GlobalOnly,
    /// Mutex-guarded FIFO ring, no caches.
    LockedRing,
}

impl HandlerKind {
    pub const ALL: [HandlerKind; 3] = [
        HandlerKind::TurboMem,
        HandlerKind::GlobalOnly,
        HandlerKind::LockedRing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HandlerKind::TurboMem => "turbomem",
            HandlerKind::GlobalOnly => "global-only",
            HandlerKind::LockedRing => "locked-ring",
        }
    }
}

impl fmt::Display for HandlerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HandlerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "turbomem" | "turbo-mem" | "cached" => Ok(HandlerKind::TurboMem),
            "global-only" | "globalonly" | "stack" => Ok(HandlerKind::GlobalOnly),
            "locked-ring" | "lockedring" | "ring" => Ok(HandlerKind::LockedRing),
            other => Err(format!("unknown handler {other:?}")),
        }
    }
}

/// Per-thread access to a handler. Not shared across threads.
pub trait LocalHandle {
    fn alloc(&mut self) -> Result<SlotIndex, PoolError>;

    fn free(&mut self, slot: SlotIndex) -> Result<(), PoolError>;

    /// All-or-nothing: fewer than `n` obtainable slots leaves the free
    /// state unchanged and returns [`PoolError::PoolExhausted`].
    fn alloc_bulk(&mut self, n: usize) -> Result<Vec<SlotIndex>, PoolError>;

    fn free_bulk(&mut self, slots: &[SlotIndex]) -> Result<(), PoolError>;
}

pub trait PoolHandler: Send + Sync {
    type Local<'a>: LocalHandle
    where
        Self: 'a;

    fn kind(&self) -> HandlerKind;

    fn register(&self) -> Result<Self::Local<'_>, PoolError>;

    fn arena(&self) -> &SlotArena;

    /// Per-field atomic reads; consistent only at quiescence.
    fn stats(&self) -> PoolStats;

    /// Double claims seen by the claim stamps, `None` outside audit mode.
    fn double_claims(&self) -> Option<u64>;

    fn capacity(&self) -> usize {
        self.arena().capacity()
    }

    fn slot_address(&self, slot: SlotIndex) -> Result<NonNull<u8>, PoolError> {
        self.arena().slot_address(slot)
    }
}
