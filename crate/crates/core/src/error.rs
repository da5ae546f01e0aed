use std::io;

use thiserror::Error;

use crate::slot::SlotIndex;

/// Errors produced by the pool handlers and their configuration.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("region too small: need {needed} bytes, region has {available}")]
    RegionTooSmall { needed: usize, available: usize },

    #[error("object size {0} is below the 8-byte free-list link width")]
    ObjectTooSmall(usize),

    #[error("alignment {0} must be a power of two and at least 64")]
    InvalidAlignment(usize),

    #[error("invalid watermarks: {0}")]
    InvalidWatermarks(String),

    #[error("capacity must be in 1..={max}, got {got}")]
    InvalidCapacity { got: usize, max: usize },

    #[error("capacity {capacity} cannot back {threads} caches of {cache} slots")]
    CapacityBelowCaches {
        capacity: usize,
        threads: usize,
        cache: usize,
    },

    #[error("region base is not aligned to {0} bytes")]
    RegionMisaligned(usize),

    #[error("region was reserved with {region:?} but the pool expects {config:?}")]
    PolicyMismatch {
        region: crate::config::HugePolicy,
        config: crate::config::HugePolicy,
    },

    #[error("region has been released")]
    RegionReleased,

    #[error("thread registration limit ({0}) reached")]
    RegistrationLimit(usize),

    #[error("handle retired")]
    HandleRetired,

    #[error("pool exhausted")]
    PoolExhausted,

    #[error("double free of slot {0}")]
    DoubleFree(SlotIndex),

    #[error("slot {0} is out of range")]
    InvalidSlot(SlotIndex),

    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("region length must be non-zero")]
    ZeroLength,

    #[error("alignment {0} is not a power of two")]
    InvalidAlignment(usize),

    #[error("mapping failed: {0}")]
    Map(#[source] io::Error),

    #[error("huge pages required but unavailable on this host")]
    HugeUnsupported,

    #[error("huge-page advice needs AdviseHuge or RequireHuge, region uses PlainPages")]
    NotHugePolicy,

    #[error("NUMA node {0} does not exist on this host")]
    UnknownNode(u32),

    #[error("region released")]
    Released,

    #[error("region already released")]
    DoubleRelease,
}

// io::Error is not Clone; PoolError wants to be.
impl Clone for RegionError {
    fn clone(&self) -> Self {
        match self {
            Self::ZeroLength => Self::ZeroLength,
            Self::InvalidAlignment(a) => Self::InvalidAlignment(*a),
            Self::Map(e) => Self::Map(io::Error::new(e.kind(), e.to_string())),
            Self::HugeUnsupported => Self::HugeUnsupported,
            Self::NotHugePolicy => Self::NotHugePolicy,
            Self::UnknownNode(n) => Self::UnknownNode(*n),
            Self::Released => Self::Released,
            Self::DoubleRelease => Self::DoubleRelease,
        }
    }
}

impl PartialEq for RegionError {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Map(a), Self::Map(b)) => a.kind() == b.kind(),
            (Self::InvalidAlignment(a), Self::InvalidAlignment(b)) => a == b,
            (Self::UnknownNode(a), Self::UnknownNode(b)) => a == b,
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

impl Eq for RegionError {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AffinityError {
    #[error("core {0} is not part of the host topology")]
    UnknownCore(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CounterError {
    #[error("counters stopped without being started")]
    StopWithoutStart,

    #[error("counters already running")]
    AlreadyStarted,

    #[error("unknown counter event {0:?}")]
    UnknownEvent(String),
}
