use serde::{Deserialize, Serialize};

use crate::error::PoolError;
use crate::slot::SlotIndex;

/// Size of one transparent huge page on x86-64 and aarch64 (4K granule).
pub const HUGE_PAGE_SIZE: usize = 2 << 20;
/// Base page size assumed for touching and rounding.
pub const BASE_PAGE_SIZE: usize = 4096;
/// Bytes of a free slot used for the intrusive next link.
pub const LINK_BYTES: usize = 8;
pub const MIN_ALIGNMENT: usize = 64;

pub const DEFAULT_CACHE_CAPACITY: usize = 512;
pub const DEFAULT_MAX_THREADS: usize = 64;

/// How the backing region should be paged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HugePolicy {
    /// 4 KB pages; huge-page promotion is explicitly suppressed.
    PlainPages,
    /// Advise the kernel to promote the region; carry on if it cannot.
    AdviseHuge,
    /// Like `AdviseHuge`, but fail when the host has no huge-page support.
    RequireHuge,
}

impl HugePolicy {
    pub fn wants_huge(self) -> bool {
        !matches!(self, HugePolicy::PlainPages)
    }

    /// Minimum base alignment for a region under this policy.
    pub fn base_alignment(self) -> usize {
        if self.wants_huge() {
            HUGE_PAGE_SIZE
        } else {
            BASE_PAGE_SIZE
        }
    }
}

impl std::fmt::Display for HugePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HugePolicy::PlainPages => "plain",
            HugePolicy::AdviseHuge => "advise",
            HugePolicy::RequireHuge => "require",
        })
    }
}

impl std::str::FromStr for HugePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "plain-pages" | "plainpages" | "off" => Ok(HugePolicy::PlainPages),
            "advise" | "advise-huge" | "advisehuge" => Ok(HugePolicy::AdviseHuge),
            "require" | "require-huge" | "requirehuge" => Ok(HugePolicy::RequireHuge),
            other => Err(format!("unknown huge-page policy {other:?}")),
        }
    }
}

/// Sizing, batching, alignment and placement knobs for a [`Pool`](crate::Pool).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub object_size: usize,
    pub capacity: usize,
    /// Slots each thread cache can hold.
    pub cache_capacity: usize,
    /// Slots pulled from the global stack on a cache miss.
    pub refill_batch: usize,
    /// Slots pushed to the global stack when a full cache receives a free.
    pub flush_batch: usize,
    pub alignment: usize,
    pub numa_node: Option<u32>,
    pub huge_policy: HugePolicy,
    pub max_threads: usize,
    /// Per-slot claim stamps: detects double frees and double claims.
    pub audit: bool,
    /// Record the tag of every successful global-head CAS, up to this many.
    pub head_log_capacity: usize,
}

impl PoolConfig {
    pub fn new(object_size: usize, capacity: usize) -> Self {
        PoolConfig {
            object_size,
            capacity,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            refill_batch: DEFAULT_CACHE_CAPACITY / 2,
            flush_batch: DEFAULT_CACHE_CAPACITY / 2,
            alignment: MIN_ALIGNMENT,
            numa_node: None,
            huge_policy: HugePolicy::AdviseHuge,
            max_threads: DEFAULT_MAX_THREADS,
            audit: false,
            head_log_capacity: 0,
        }
    }

    /// Sets the cache size and resets both batches to half of it.
    pub fn with_cache(mut self, cache_capacity: usize) -> Self {
        self.cache_capacity = cache_capacity;
        self.refill_batch = (cache_capacity / 2).max(1);
        self.flush_batch = (cache_capacity / 2).max(1);
        self
    }

    pub fn with_batches(mut self, refill_batch: usize, flush_batch: usize) -> Self {
        self.refill_batch = refill_batch;
        self.flush_batch = flush_batch;
        self
    }

    pub fn with_alignment(mut self, alignment: usize) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn with_max_threads(mut self, max_threads: usize) -> Self {
        self.max_threads = max_threads;
        self
    }

    pub fn with_huge_policy(mut self, policy: HugePolicy) -> Self {
        self.huge_policy = policy;
        self
    }

    pub fn with_numa_node(mut self, node: Option<u32>) -> Self {
        self.numa_node = node;
        self
    }

    pub fn with_audit(mut self, audit: bool) -> Self {
        self.audit = audit;
        self
    }

    pub fn with_head_log(mut self, capacity: usize) -> Self {
        self.head_log_capacity = capacity;
        self
    }

    /// Distance in bytes between consecutive slots.
    pub fn stride(&self) -> usize {
        stride_for(self.object_size, self.alignment)
    }

    /// Bytes the slots occupy.
    pub fn slots_bytes(&self) -> usize {
        self.capacity * self.stride()
    }

    /// Backing region length: slot bytes rounded up to the policy's page
    /// granule, so an advised region has no unpromotable tail.
    pub fn region_len(&self) -> usize {
        round_up(self.slots_bytes().max(1), self.huge_policy.base_alignment())
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if self.object_size < LINK_BYTES {
            return Err(PoolError::ObjectTooSmall(self.object_size));
        }
        if !self.alignment.is_power_of_two() || self.alignment < MIN_ALIGNMENT {
            return Err(PoolError::InvalidAlignment(self.alignment));
        }
        if self.capacity == 0 || self.capacity > SlotIndex::MAX_CAPACITY {
            return Err(PoolError::InvalidCapacity {
                got: self.capacity,
                max: SlotIndex::MAX_CAPACITY,
            });
        }
        if self.cache_capacity == 0 {
            return Err(PoolError::InvalidWatermarks(
                "cache_capacity must be positive".into(),
            ));
        }
        if self.refill_batch == 0 || self.refill_batch > self.cache_capacity {
            return Err(PoolError::InvalidWatermarks(format!(
                "refill_batch {} not in 1..={}",
                self.refill_batch, self.cache_capacity
            )));
        }
        if self.flush_batch == 0 || self.flush_batch > self.cache_capacity {
            return Err(PoolError::InvalidWatermarks(format!(
                "flush_batch {} not in 1..={}",
                self.flush_batch, self.cache_capacity
            )));
        }
        if self.max_threads == 0 {
            return Err(PoolError::InvalidWatermarks(
                "max_threads must be positive".into(),
            ));
        }
        let needed = self.max_threads.saturating_mul(self.cache_capacity);
        if self.capacity < needed {
            return Err(PoolError::CapacityBelowCaches {
                capacity: self.capacity,
                threads: self.max_threads,
                cache: self.cache_capacity,
            });
        }
        Ok(())
    }
}

/// `object_size` rounded up to a multiple of `alignment` (a power of two).
pub fn stride_for(object_size: usize, alignment: usize) -> usize {
    round_up(object_size, alignment)
}

pub(crate) fn round_up(n: usize, to: usize) -> usize {
    debug_assert!(to.is_power_of_two());
    (n + to - 1) & !(to - 1)
}
