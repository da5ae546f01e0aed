//! A fixed-size, lock-free object pool for packet-buffer workloads.
//!
//! The pool keeps every free slot on a global Treiber stack whose head is a
//! tagged index word, and fronts it with strictly thread-owned caches that
//! move slots to and from the stack in batches. All slots live in one
//! contiguous [`MemoryRegion`], optionally advised for transparent huge
//! pages and bound to a NUMA node.
//!
//! The crate also ships the two comparison handlers used by the benchmark
//! harness ([`LockedRingPool`] and [`GlobalOnlyPool`]), CPU topology and
//! pinning helpers, optional hardware counter sampling, and the forwarding
//! micro-benchmark itself (see [`bench`]).
//!
//! ```no_run
//! use turbomem::{HugePolicy, Pool, PoolConfig};
//!
//! let config = PoolConfig::new(256, 1 << 16).with_huge_policy(HugePolicy::AdviseHuge);
//! let pool = Pool::create(config).unwrap();
//! let mut handle = pool.register_thread().unwrap();
//! let slot = handle.alloc().unwrap();
//! handle.free(slot).unwrap();
//! ```

pub mod affinity;
pub mod arena;
pub mod audit;
pub mod backend;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod counters;
pub mod error;
pub mod handler;
pub mod pool;
pub mod region;
pub mod slot;
pub mod stack;

pub use affinity::{enumerate_topology, pin_current_thread, PinOutcome, Topology};
pub use arena::SlotArena;
pub use baselines::{GlobalOnlyPool, LockedRingPool};
pub use config::{HugePolicy, PoolConfig};
pub use counters::{CounterEvent, CounterSet};
pub use error::{AffinityError, CounterError, PoolError, RegionError};
pub use handler::{HandlerKind, LocalHandle, PoolHandler};
pub use pool::{Pool, PoolStats, ThreadHandle};
pub use region::{reserve_region, AdviceOutcome, HugeCoverage, MemoryRegion, PageKind};
pub use slot::{PackedHead, SlotIndex};
