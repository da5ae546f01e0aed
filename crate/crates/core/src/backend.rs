//! The OS boundary for backing memory.
//!
//! Everything the region code needs from the host kernel (anonymous
//! mappings, huge-page advice, NUMA binding and per-mapping introspection)
//! goes through [`MemoryBackend`], so tests can run the same region and pool
//! code over [`HeapBackend`], which supports none of the optional facilities.

use std::alloc::{self, Layout};
use std::fmt;
use std::io;
use std::ptr::NonNull;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// System-wide transparent huge page mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThpMode {
    Always,
    Madvise,
    Never,
}

impl ThpMode {
    /// Parses the `always [madvise] never` format of the sysfs knob.
    pub fn parse(text: &str) -> Option<ThpMode> {
        let start = text.find('[')?;
        let end = start + text[start..].find(']')?;
        match &text[start + 1..end] {
            "always" => Some(ThpMode::Always),
            "madvise" => Some(ThpMode::Madvise),
            "never" => Some(ThpMode::Never),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageAdvice {
    Huge,
    NoHuge,
}

/// Result of issuing huge-page advice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceOutcome {
    Advised,
    Unsupported,
}

pub trait MemoryBackend: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Maps `len` zeroed bytes at an address aligned to `align`.
    fn map(&self, len: usize, align: usize) -> io::Result<NonNull<u8>>;

    /// # Safety
    ///
    /// `(base, len, align)` must come from a prior `map` on this backend and
    /// nothing may reference the memory afterwards.
    unsafe fn unmap(&self, base: NonNull<u8>, len: usize, align: usize) -> io::Result<()>;

    fn advise(&self, base: NonNull<u8>, len: usize, advice: PageAdvice) -> AdviceOutcome;

    /// Binds future page placement of the range to `node`.
    fn bind_node(&self, base: NonNull<u8>, len: usize, node: u32) -> io::Result<()>;

    fn thp_mode(&self) -> Option<ThpMode>;

    /// Bytes of the range currently backed by anonymous huge pages.
    fn huge_bytes(&self, base: NonNull<u8>, len: usize) -> Option<u64>;

    /// Bytes of the range currently resident.
    fn resident_bytes(&self, base: NonNull<u8>, len: usize) -> Option<u64>;

    /// NUMA node of each resident base page in the range, `None` for pages
    /// the kernel could not report.
    fn page_nodes(&self, base: NonNull<u8>, len: usize) -> Option<Vec<Option<u32>>>;
}

/// Portable backend over the global allocator. Advice, binding and
/// introspection are all unsupported.
#[derive(Debug, Default, Clone, Copy)]
pub struct HeapBackend;

impl MemoryBackend for HeapBackend {
    fn name(&self) -> &'static str {
        "heap"
    }

    fn map(&self, len: usize, align: usize) -> io::Result<NonNull<u8>> {
        let layout = Layout::from_size_align(len, align)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        // SAFETY: len > 0 is checked by the region layer.
        let p = unsafe { alloc::alloc_zeroed(layout) };
        NonNull::new(p).ok_or_else(|| io::Error::from(io::ErrorKind::OutOfMemory))
    }

    unsafe fn unmap(&self, base: NonNull<u8>, len: usize, align: usize) -> io::Result<()> {
        let layout = Layout::from_size_align(len, align)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        alloc::dealloc(base.as_ptr(), layout);
        Ok(())
    }

    fn advise(&self, _: NonNull<u8>, _: usize, _: PageAdvice) -> AdviceOutcome {
        AdviceOutcome::Unsupported
    }

    fn bind_node(&self, _: NonNull<u8>, _: usize, _: u32) -> io::Result<()> {
        Err(io::Error::from(io::ErrorKind::Unsupported))
    }

    fn thp_mode(&self) -> Option<ThpMode> {
        None
    }

    fn huge_bytes(&self, _: NonNull<u8>, _: usize) -> Option<u64> {
        None
    }

    fn resident_bytes(&self, _: NonNull<u8>, _: usize) -> Option<u64> {
        None
    }

    fn page_nodes(&self, _: NonNull<u8>, _: usize) -> Option<Vec<Option<u32>>> {
        None
    }
}

#[cfg(target_os = "linux")]
pub use linux::OsBackend;

#[cfg(not(target_os = "linux"))]
pub type OsBackend = HeapBackend;

/// The host's native backend.
pub fn default_backend() -> Arc<dyn MemoryBackend> {
    Arc::new(OsBackend)
}

/// Sums `AnonHugePages` over every mapping in an smaps dump that overlaps
/// `[start, end)`, clamping each mapping's contribution to the overlap.
/// Returns `None` when no mapping overlaps the range.
pub fn huge_bytes_in_smaps(smaps: &str, start: usize, end: usize) -> Option<u64> {
    let mut total = 0u64;
    let mut found = false;
    let mut overlap: Option<u64> = None;

    for line in smaps.lines() {
        if let Some((lo, hi)) = parse_mapping_header(line) {
            overlap = if lo < end && hi > start {
                found = true;
                Some((hi.min(end) - lo.max(start)) as u64)
            } else {
                None
            };
            continue;
        }
        let Some(overlap) = overlap else { continue };
        if let Some(rest) = line.strip_prefix("AnonHugePages:") {
            let kb: u64 = rest
                .split_whitespace()
                .next()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            total += (kb * 1024).min(overlap);
        }
    }
    found.then_some(total)
}

fn parse_mapping_header(line: &str) -> Option<(usize, usize)> {
    let range = line.split_whitespace().next()?;
    let (lo, hi) = range.split_once('-')?;
    let lo = usize::from_str_radix(lo, 16).ok()?;
    let hi = usize::from_str_radix(hi, 16).ok()?;
    (hi > lo).then_some((lo, hi))
}

#[cfg(target_os = "linux")]
mod linux {
    use std::fs;
    use std::io;
    use std::ptr::{self, NonNull};

    use super::{huge_bytes_in_smaps, AdviceOutcome, MemoryBackend, PageAdvice, ThpMode};
    use crate::config::{round_up, BASE_PAGE_SIZE};

    const MPOL_BIND: libc::c_int = 2;

    /// `mmap`/`madvise`/`mbind` backend with `/proc` and `/sys` introspection.
    #[derive(Debug, Default, Clone, Copy)]
    pub struct OsBackend;

    impl MemoryBackend for OsBackend {
        fn name(&self) -> &'static str {
            "linux-mmap"
        }

        fn map(&self, len: usize, align: usize) -> io::Result<NonNull<u8>> {
            let len = round_up(len, BASE_PAGE_SIZE);
            let align = align.max(BASE_PAGE_SIZE);
            let span = len + if align > BASE_PAGE_SIZE { align } else { 0 };
            // SAFETY: fresh anonymous private mapping, no fd.
            let raw = unsafe {
                libc::mmap(
                    ptr::null_mut(),
                    span,
                    libc::PROT_READ | libc::PROT_WRITE,
                    libc::MAP_PRIVATE | libc::MAP_ANONYMOUS,
                    -1,
                    0,
                )
            };
            if raw == libc::MAP_FAILED {
                return Err(io::Error::last_os_error());
            }
            // Over-allocated by `align`; trim the misaligned head and tail.
            let start = raw as usize;
            let aligned = round_up(start, align);
            let head = aligned - start;
            let tail = span - head - len;
            // SAFETY: both ranges lie inside the mapping just created.
            unsafe {
                if head > 0 {
                    libc::munmap(raw, head);
                }
                if tail > 0 {
                    libc::munmap((aligned + len) as *mut libc::c_void, tail);
                }
            }
            Ok(NonNull::new(aligned as *mut u8).expect("mmap returned null"))
        }

        unsafe fn unmap(&self, base: NonNull<u8>, len: usize, _align: usize) -> io::Result<()> {
            let len = round_up(len, BASE_PAGE_SIZE);
            if libc::munmap(base.as_ptr().cast(), len) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        fn advise(&self, base: NonNull<u8>, len: usize, advice: PageAdvice) -> AdviceOutcome {
            let flag = match advice {
                PageAdvice::Huge => libc::MADV_HUGEPAGE,
                PageAdvice::NoHuge => libc::MADV_NOHUGEPAGE,
            };
            // SAFETY: the range is a live mapping owned by the caller.
            let rc = unsafe { libc::madvise(base.as_ptr().cast(), len, flag) };
            if rc == 0 {
                AdviceOutcome::Advised
            } else {
                log::debug!("madvise failed: {}", io::Error::last_os_error());
                AdviceOutcome::Unsupported
            }
        }

        fn bind_node(&self, base: NonNull<u8>, len: usize, node: u32) -> io::Result<()> {
            let words = node as usize / 64 + 1;
            let mut mask = vec![0u64; words];
            mask[node as usize / 64] |= 1 << (node % 64);
            // SAFETY: mask outlives the call; maxnode covers the mask words.
            let rc = unsafe {
                libc::syscall(
                    libc::SYS_mbind,
                    base.as_ptr(),
                    len,
                    MPOL_BIND,
                    mask.as_ptr(),
                    (words * 64 + 1) as libc::c_ulong,
                    0 as libc::c_uint,
                )
            };
            if rc != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        fn thp_mode(&self) -> Option<ThpMode> {
            let text = fs::read_to_string("/sys/kernel/mm/transparent_hugepage/enabled").ok()?;
            ThpMode::parse(&text)
        }

        fn huge_bytes(&self, base: NonNull<u8>, len: usize) -> Option<u64> {
            let smaps = fs::read_to_string("/proc/self/smaps").ok()?;
            let start = base.as_ptr() as usize;
            huge_bytes_in_smaps(&smaps, start, start + len)
        }

        fn resident_bytes(&self, base: NonNull<u8>, len: usize) -> Option<u64> {
            let pages = round_up(len, BASE_PAGE_SIZE) / BASE_PAGE_SIZE;
            let mut vec = vec![0u8; pages];
            // SAFETY: vec has one byte per page of the range.
            let rc = unsafe { libc::mincore(base.as_ptr().cast(), len, vec.as_mut_ptr()) };
            if rc != 0 {
                return None;
            }
            let resident = vec.iter().filter(|b| **b & 1 == 1).count();
            Some((resident * BASE_PAGE_SIZE) as u64)
        }

        fn page_nodes(&self, base: NonNull<u8>, len: usize) -> Option<Vec<Option<u32>>> {
            let pages = round_up(len, BASE_PAGE_SIZE) / BASE_PAGE_SIZE;
            let addrs: Vec<*mut libc::c_void> = (0..pages)
                .map(|i| (base.as_ptr() as usize + i * BASE_PAGE_SIZE) as *mut libc::c_void)
                .collect();
            let mut status = vec![0 as libc::c_int; pages];
            // SAFETY: null `nodes` turns move_pages into a pure query.
            let rc = unsafe {
                libc::syscall(
                    libc::SYS_move_pages,
                    0 as libc::c_int,
                    pages as libc::c_ulong,
                    addrs.as_ptr(),
                    ptr::null::<libc::c_int>(),
                    status.as_mut_ptr(),
                    0 as libc::c_int,
                )
            };
            if rc != 0 {
                return None;
            }
            Some(status.into_iter().map(|s| u32::try_from(s).ok()).collect())
        }
    }
}
