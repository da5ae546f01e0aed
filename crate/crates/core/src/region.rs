//! The contiguous backing region of a pool.
//!
//! Lifecycle: [`reserve_region`] → [`MemoryRegion::advise_huge`] (huge
//! policies only) → [`MemoryRegion::touch_pages`] → pool traffic →
//! [`MemoryRegion::release`]. Reserve, advise, touch and release are
//! single-threaded per region; [`MemoryRegion::inspect_huge_coverage`] may run
//! alongside pool traffic.

use std::fmt;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::affinity::{enumerate_topology, pin_current_thread};
pub use crate::backend::AdviceOutcome;
use crate::backend::{default_backend, MemoryBackend, PageAdvice, ThpMode};
use crate::config::{HugePolicy, BASE_PAGE_SIZE, HUGE_PAGE_SIZE};
use crate::error::RegionError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PageKind {
    Unknown = 0,
    Base4K = 1,
    Huge2M = 2,
    Mixed = 3,
}

impl PageKind {
    fn from_u8(v: u8) -> Self {
        match v {
            1 => PageKind::Base4K,
            2 => PageKind::Huge2M,
            3 => PageKind::Mixed,
            _ => PageKind::Unknown,
        }
    }
}

/// How much of a region is backed by 2 MB mappings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HugeCoverage {
    pub huge_bytes: u64,
    pub total_bytes: u64,
    pub fraction: f64,
}

impl HugeCoverage {
    fn new(huge_bytes: u64, total_bytes: u64) -> Self {
        let huge_bytes = huge_bytes.min(total_bytes);
        let fraction = if total_bytes == 0 {
            0.0
        } else {
            huge_bytes as f64 / total_bytes as f64
        };
        HugeCoverage {
            huge_bytes,
            total_bytes,
            fraction,
        }
    }
}

pub struct MemoryRegion {
    base: NonNull<u8>,
    len: usize,
    map_align: usize,
    policy: HugePolicy,
    numa_node: Option<u32>,
    node_bound: bool,
    kind: AtomicU8,
    released: bool,
    backend: Arc<dyn MemoryBackend>,
}

// SAFETY: the region is a plain byte range; all interior mutation of the
// bytes is mediated by the pool, and `kind` is atomic.
unsafe impl Send for MemoryRegion {}
unsafe impl Sync for MemoryRegion {}

/// Reserves an anonymous region on the host backend.
pub fn reserve_region(
    length: usize,
    alignment: usize,
    policy: HugePolicy,
    numa_node: Option<u32>,
) -> Result<MemoryRegion, RegionError> {
    MemoryRegion::reserve_with(default_backend(), length, alignment, policy, numa_node)
}

impl MemoryRegion {
    pub fn reserve_with(
        backend: Arc<dyn MemoryBackend>,
        length: usize,
        alignment: usize,
        policy: HugePolicy,
        numa_node: Option<u32>,
    ) -> Result<MemoryRegion, RegionError> {
        if length == 0 {
            return Err(RegionError::ZeroLength);
        }
        if !alignment.is_power_of_two() {
            return Err(RegionError::InvalidAlignment(alignment));
        }
        if policy == HugePolicy::RequireHuge
            && matches!(backend.thp_mode(), None | Some(ThpMode::Never))
        {
            return Err(RegionError::HugeUnsupported);
        }
        let topology = numa_node.map(|_| enumerate_topology());
        if let (Some(node), Some(t)) = (numa_node, &topology) {
            if !t.has_node(node) {
                return Err(RegionError::UnknownNode(node));
            }
        }

        let map_align = alignment.max(policy.base_alignment());
        let base = backend.map(length, map_align).map_err(RegionError::Map)?;
        debug_assert_eq!(base.as_ptr() as usize % map_align, 0);

        let mut node_bound = false;
        if let (Some(node), Some(t)) = (numa_node, &topology) {
            match backend.bind_node(base, length, node) {
                Ok(()) => node_bound = true,
                // A single node needs no binding; otherwise first touch from a
                // pinned thread places the pages.
                Err(e) if t.nodes.len() == 1 => {
                    log::debug!("mbind unavailable on single-node host: {e}");
                    node_bound = true;
                }
                Err(e) => log::warn!("mbind to node {node} failed ({e}); using first-touch"),
            }
        }

        let kind = if policy == HugePolicy::PlainPages {
            // Keep plain regions plain even when THP is system-wide "always".
            backend.advise(base, length, PageAdvice::NoHuge);
            PageKind::Base4K
        } else {
            PageKind::Unknown
        };

        Ok(MemoryRegion {
            base,
            len: length,
            map_align,
            policy,
            numa_node,
            node_bound,
            kind: AtomicU8::new(kind as u8),
            released: false,
            backend,
        })
    }

    pub fn base(&self) -> NonNull<u8> {
        self.base
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn policy(&self) -> HugePolicy {
        self.policy
    }

    pub fn numa_node(&self) -> Option<u32> {
        self.numa_node
    }

    /// Whether page placement is pinned to `numa_node` by the kernel (as
    /// opposed to relying on first touch).
    pub fn node_bound(&self) -> bool {
        self.node_bound
    }

    pub fn page_kind(&self) -> PageKind {
        PageKind::from_u8(self.kind.load(Ordering::Relaxed))
    }

    pub fn backend(&self) -> &dyn MemoryBackend {
        &*self.backend
    }

    pub fn is_released(&self) -> bool {
        self.released
    }

    /// Issues huge-page advice over the whole region.
    pub fn advise_huge(&self) -> Result<AdviceOutcome, RegionError> {
        self.check_live()?;
        if !self.policy.wants_huge() {
            return Err(RegionError::NotHugePolicy);
        }
        let outcome = self.backend.advise(self.base, self.len, PageAdvice::Huge);
        match (outcome, self.policy) {
            (AdviceOutcome::Unsupported, HugePolicy::RequireHuge) => {
                Err(RegionError::HugeUnsupported)
            }
            (AdviceOutcome::Unsupported, _) => {
                log::warn!("huge-page advice unsupported; continuing on base pages");
                Ok(outcome)
            }
            _ => Ok(outcome),
        }
    }

    /// Faults every page in with a read-write touch that preserves contents.
    /// With a node given, the touch runs on a thread pinned to one of that
    /// node's cores.
    pub fn touch_pages(&self, numa_node: Option<u32>) -> Result<(), RegionError> {
        self.check_live()?;
        let core = numa_node.and_then(|node| enumerate_topology().cores_of(node).next());
        match core {
            Some(core) => std::thread::scope(|s| {
                s.spawn(|| {
                    if let Ok(outcome) = pin_current_thread(core) {
                        if !outcome.is_pinned() {
                            log::debug!("first-touch thread not pinned: {outcome:?}");
                        }
                    }
                    self.touch_range();
                });
            }),
            None => self.touch_range(),
        }
        Ok(())
    }

    fn touch_range(&self) {
        let p = self.base.as_ptr();
        for off in (0..self.len).step_by(BASE_PAGE_SIZE) {
            // SAFETY: off < len; callers serialize touch against pool traffic.
            unsafe {
                let b = p.add(off);
                b.write_volatile(b.read_volatile());
            }
        }
    }

    /// Reads the host's per-mapping accounting. `Ok(None)` when the backend
    /// has no such introspection.
    pub fn inspect_huge_coverage(&self) -> Result<Option<HugeCoverage>, RegionError> {
        self.check_live()?;
        let total = self.len as u64;
        let coverage = if self.len < HUGE_PAGE_SIZE {
            Some(HugeCoverage::new(0, total))
        } else {
            self.backend
                .huge_bytes(self.base, self.len)
                .map(|huge| HugeCoverage::new(huge, total))
        };
        if let Some(c) = coverage {
            let kind = if c.huge_bytes == 0 {
                PageKind::Base4K
            } else if c.huge_bytes >= total / HUGE_PAGE_SIZE as u64 * HUGE_PAGE_SIZE as u64 {
                PageKind::Huge2M
            } else {
                PageKind::Mixed
            };
            self.kind.store(kind as u8, Ordering::Relaxed);
        }
        Ok(coverage)
    }

    pub fn resident_bytes(&self) -> Result<Option<u64>, RegionError> {
        self.check_live()?;
        Ok(self.backend.resident_bytes(self.base, self.len))
    }

    /// NUMA node of each resident page, when the host reports it.
    pub fn page_nodes(&self) -> Result<Option<Vec<Option<u32>>>, RegionError> {
        self.check_live()?;
        Ok(self.backend.page_nodes(self.base, self.len))
    }

    pub fn release(&mut self) -> Result<(), RegionError> {
        if self.released {
            return Err(RegionError::DoubleRelease);
        }
        self.released = true;
        // SAFETY: same (base, len, align) as reserved; &mut self proves no
        // pool borrows the region.
        unsafe { self.backend.unmap(self.base, self.len, self.map_align) }.map_err(RegionError::Map)
    }

    fn check_live(&self) -> Result<(), RegionError> {
        if self.released {
            Err(RegionError::Released)
        } else {
            Ok(())
        }
    }
}

impl Drop for MemoryRegion {
    fn drop(&mut self) {
        if !self.released {
            if let Err(e) = self.release() {
                log::error!("failed to unmap region: {e}");
            }
        }
    }
}

impl fmt::Debug for MemoryRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryRegion")
            .field("base", &self.base)
            .field("len", &self.len)
            .field("policy", &self.policy)
            .field("numa_node", &self.numa_node)
            .field("page_kind", &self.page_kind())
            .field("backend", &self.backend.name())
            .field("released", &self.released)
            .finish()
    }
}
