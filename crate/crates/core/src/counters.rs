//! Hardware and software performance counters around a measured window.
//!
//! Events are symbolic; the host encoding lives in this module only. Each
//! [`CounterSet`] counts the thread that opened it, in user space only.
//! Events the host cannot provide (no PMU, restrictive
//! `perf_event_paranoid`, non-Linux OS) are flagged unavailable and never
//! produce a reading.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CounterError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterEvent {
    Cycles,
    Instructions,
    DtlbLoadMisses,
    LlcReferences,
    LlcMisses,
    TaskClock,
    PageFaults,
}

impl CounterEvent {
    pub const ALL: [CounterEvent; 7] = [
        CounterEvent::Cycles,
        CounterEvent::Instructions,
        CounterEvent::DtlbLoadMisses,
        CounterEvent::LlcReferences,
        CounterEvent::LlcMisses,
        CounterEvent::TaskClock,
        CounterEvent::PageFaults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CounterEvent::Cycles => "cycles",
            CounterEvent::Instructions => "instructions",
            CounterEvent::DtlbLoadMisses => "dtlb-load-misses",
            CounterEvent::LlcReferences => "llc-references",
            CounterEvent::LlcMisses => "llc-misses",
            CounterEvent::TaskClock => "task-clock",
            CounterEvent::PageFaults => "page-faults",
        }
    }
}

impl fmt::Display for CounterEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CounterEvent {
    type Err = CounterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        CounterEvent::ALL
            .into_iter()
            .find(|e| e.as_str() == norm)
            .ok_or_else(|| CounterError::UnknownEvent(s.to_string()))
    }
}

/// Deltas over one window. `None` marks an unavailable event.
pub type Readings = BTreeMap<CounterEvent, Option<u64>>;

#[derive(Debug)]
pub struct CounterSet {
    counters: Vec<(CounterEvent, Option<sys::Counter>)>,
    running: bool,
}

impl CounterSet {
    /// Opens one counter per event for the calling thread. Never fails;
    /// events the host refuses are marked unavailable.
    pub fn open(events: &[CounterEvent]) -> CounterSet {
        let mut seen = Vec::new();
        let counters = events
            .iter()
            .copied()
            .filter(|e| {
                let fresh = !seen.contains(e);
                seen.push(*e);
                fresh
            })
            .map(|e| {
                let c = sys::Counter::open(e);
                if c.is_none() {
                    log::debug!("counter {e} unavailable");
                }
                (e, c)
            })
            .collect();
        CounterSet {
            counters,
            running: false,
        }
    }

    pub fn events(&self) -> impl Iterator<Item = CounterEvent> + '_ {
        self.counters.iter().map(|(e, _)| *e)
    }

    pub fn is_available(&self, event: CounterEvent) -> bool {
        self.counters
            .iter()
            .any(|(e, c)| *e == event && c.is_some())
    }

    pub fn any_available(&self) -> bool {
        self.counters.iter().any(|(_, c)| c.is_some())
    }

    pub fn start(&mut self) -> Result<(), CounterError> {
        if self.running {
            return Err(CounterError::AlreadyStarted);
        }
        for (_, c) in &mut self.counters {
            if let Some(counter) = c {
                if !counter.start() {
                    *c = None;
                }
            }
        }
        self.running = true;
        Ok(())
    }

    pub fn stop(&mut self) -> Result<Readings, CounterError> {
        if !self.running {
            return Err(CounterError::StopWithoutStart);
        }
        self.running = false;
        Ok(self
            .counters
            .iter()
            .map(|(e, c)| (*e, c.as_ref().and_then(sys::Counter::stop)))
            .collect())
    }
}

/// Shorthand for [`CounterSet::open`].
pub fn open_counters(events: &[CounterEvent]) -> CounterSet {
    CounterSet::open(events)
}

#[cfg(target_os = "linux")]
mod sys {
    use std::mem;
    use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};

    use perf_event_open_sys as perf;
    use perf_event_open_sys::bindings as b;

    use super::CounterEvent;

    #[derive(Debug)]
    pub struct Counter {
        fd: OwnedFd,
    }

    fn encoding(event: CounterEvent) -> (u32, u64) {
        match event {
            CounterEvent::Cycles => (b::PERF_TYPE_HARDWARE, b::PERF_COUNT_HW_CPU_CYCLES as u64),
            CounterEvent::Instructions => {
                (b::PERF_TYPE_HARDWARE, b::PERF_COUNT_HW_INSTRUCTIONS as u64)
            }
            CounterEvent::LlcReferences => (
                b::PERF_TYPE_HARDWARE,
                b::PERF_COUNT_HW_CACHE_REFERENCES as u64,
            ),
            CounterEvent::LlcMisses => {
                (b::PERF_TYPE_HARDWARE, b::PERF_COUNT_HW_CACHE_MISSES as u64)
            }
            CounterEvent::DtlbLoadMisses => (
                b::PERF_TYPE_HW_CACHE,
                b::PERF_COUNT_HW_CACHE_DTLB as u64
                    | (b::PERF_COUNT_HW_CACHE_OP_READ as u64) << 8
                    | (b::PERF_COUNT_HW_CACHE_RESULT_MISS as u64) << 16,
            ),
            CounterEvent::TaskClock => (b::PERF_TYPE_SOFTWARE, b::PERF_COUNT_SW_TASK_CLOCK as u64),
            CounterEvent::PageFaults => {
                (b::PERF_TYPE_SOFTWARE, b::PERF_COUNT_SW_PAGE_FAULTS as u64)
            }
        }
    }

    impl Counter {
        pub fn open(event: CounterEvent) -> Option<Counter> {
            let (type_, config) = encoding(event);
            let mut attr = b::perf_event_attr {
                type_,
                size: mem::size_of::<b::perf_event_attr>() as u32,
                config,
                read_format: (b::PERF_FORMAT_TOTAL_TIME_ENABLED | b::PERF_FORMAT_TOTAL_TIME_RUNNING)
                    as u64,
                ..Default::default()
            };
            attr.set_disabled(1);
            attr.set_exclude_kernel(1);
            attr.set_exclude_hv(1);
            // SAFETY: attr is fully initialized; pid 0 / cpu -1 counts the
            // calling thread on any CPU.
            let fd = unsafe { perf::perf_event_open(&mut attr, 0, -1, -1, 0) };
            if fd < 0 {
                return None;
            }
            // SAFETY: fd was just returned by the kernel and is owned here.
            Some(Counter {
                fd: unsafe { OwnedFd::from_raw_fd(fd) },
            })
        }

        pub fn start(&mut self) -> bool {
            let fd = self.fd.as_raw_fd();
            // SAFETY: valid perf fd.
            unsafe { perf::ioctls::RESET(fd, 0) >= 0 && perf::ioctls::ENABLE(fd, 0) >= 0 }
        }

        pub fn stop(&self) -> Option<u64> {
            let fd = self.fd.as_raw_fd();
            // SAFETY: valid perf fd; buffer matches read_format.
            unsafe {
                if perf::ioctls::DISABLE(fd, 0) < 0 {
                    return None;
                }
                let mut buf = [0u64; 3];
                let n = libc::read(fd, buf.as_mut_ptr().cast(), mem::size_of_val(&buf));
                if n != mem::size_of_val(&buf) as isize {
                    return None;
                }
                let [value, enabled, running] = buf;
                if running == 0 {
                    return None;
                }
                // Scale for multiplexing.
                Some(if running < enabled {
                    (value as u128 * enabled as u128 / running as u128) as u64
                } else {
                    value
                })
            }
        }
    }
}

#[cfg(not(target_os = "linux"))]
mod sys {
    use super::CounterEvent;

    #[derive(Debug)]
    pub struct Counter;

    impl Counter {
        pub fn open(_: CounterEvent) -> Option<Counter> {
            None
        }
        pub fn start(&mut self) -> bool {
            false
        }
        pub fn stop(&self) -> Option<u64> {
            None
        }
    }
}
