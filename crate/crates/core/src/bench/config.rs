use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{HugePolicy, PoolConfig, DEFAULT_CACHE_CAPACITY};
use crate::counters::CounterEvent;
use crate::handler::HandlerKind;

use super::BenchError;

/// How long each worker's measured phase runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Duration { secs: f64 },
    Ops { per_thread: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinMode {
    /// A failed pin aborts the run.
    Strict,
    /// A failed pin is recorded and the worker runs unpinned.
    Soft,
    Off,
}

impl FromStr for PinMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(PinMode::Strict),
            "soft" | "best-effort" => Ok(PinMode::Soft),
            "off" | "none" => Ok(PinMode::Off),
            other => Err(format!("unknown pin mode {other:?}")),
        }
    }
}

impl fmt::Display for PinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PinMode::Strict => "strict",
            PinMode::Soft => "soft",
            PinMode::Off => "off",
        })
    }
}

/// IMIX packet sizes and their 7:4:1 weights.
pub const IMIX: [(usize, u32); 3] = [(64, 7), (576, 4), (1500, 1)];

pub const DEFAULT_WARMUP_OPS: u64 = 1_000_000;
pub const WARMUP_FRACTION: f64 = 0.1;

/// One forwarding benchmark cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub handler: HandlerKind,
    pub threads: usize,
    pub workload: Workload,
    pub object_size: usize,
    pub capacity: usize,
    pub cache_capacity: usize,
    pub refill_batch: usize,
    pub flush_batch: usize,
    pub huge_policy: HugePolicy,
    pub pin: PinMode,
    /// Bytes written into each slot per simulated packet.
    pub descriptor_bytes: usize,
    /// Draw per-packet sizes from the IMIX mix instead.
    pub imix: bool,
    /// Packets each worker keeps in flight before freeing the oldest.
    pub burst: usize,
    pub events: Vec<CounterEvent>,
    pub seed: u64,
    pub repetitions: usize,
    /// Per-slot claim stamps during the run.
    pub audit: bool,
    pub numa_node: Option<u32>,
    /// Lower bound on warm-up operations per worker.
    pub warmup_ops: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            handler: HandlerKind::TurboMem,
            threads: 4,
            workload: Workload::Duration { secs: 5.0 },
            object_size: 256,
            capacity: 1_000_000,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            refill_batch: DEFAULT_CACHE_CAPACITY / 2,
            flush_batch: DEFAULT_CACHE_CAPACITY / 2,
            huge_policy: HugePolicy::AdviseHuge,
            pin: PinMode::Soft,
            descriptor_bytes: 128,
            imix: false,
            burst: 1,
            events: Vec::new(),
            seed: 0,
            repetitions: 5,
            audit: false,
            numa_node: None,
            warmup_ops: DEFAULT_WARMUP_OPS,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.descriptor_bytes > self.object_size {
            return bad(format!(
                "descriptor_bytes {} exceeds object_size {}",
                self.descriptor_bytes, self.object_size
            ));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.burst == 0 {
            return bad("burst must be at least 1".into());
        }
        match self.workload {
            Workload::Duration { secs } if !(secs.is_finite() && secs > 0.0) => {
                return bad(format!("duration {secs} must be positive"));
            }
            Workload::Ops { per_thread: 0 } => return bad("ops must be positive".into()),
            _ => {}
        }
        let held = self.threads * self.burst;
        if held > self.capacity {
            return bad(format!(
                "{} threads x burst {} exceed capacity {}",
                self.threads, self.burst, self.capacity
            ));
        }
        self.pool_config()
            .validate()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))
    }

    /// The pool configuration this cell runs with. Baselines use only the
    /// sizing, alignment and audit fields.
    pub fn pool_config(&self) -> PoolConfig {
        let cfg = PoolConfig::new(self.object_size, self.capacity)
            .with_huge_policy(self.huge_policy)
            .with_numa_node(self.numa_node)
            .with_audit(self.audit);
        match self.handler {
            HandlerKind::TurboMem => PoolConfig {
                cache_capacity: self.cache_capacity,
                refill_batch: self.refill_batch,
                flush_batch: self.flush_batch,
                max_threads: self.threads,
                ..cfg
            },
            _ => cfg.with_cache(1).with_max_threads(1),
        }
    }

    /// Warm-up length for one worker: `(min ops, min seconds)`, both of
    /// which must be reached.
    pub fn warmup(&self) -> (u64, f64) {
        match self.workload {
            Workload::Duration { secs } => (self.warmup_ops, secs * WARMUP_FRACTION),
            Workload::Ops { per_thread } => {
                let tenth = (per_thread as f64 * WARMUP_FRACTION) as u64;
                (tenth.max(self.warmup_ops), 0.0)
            }
        }
    }
}

/// Deterministic per-thread stream of descriptor sizes.
pub struct DescriptorSizes {
    fixed: usize,
    cap: usize,
    rng: Option<ChaCha8Rng>,
}

impl DescriptorSizes {
    pub fn new(config: &BenchConfig, thread: usize) -> Self {
        let rng = config.imix.then(|| {
            let stream = (thread as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            ChaCha8Rng::seed_from_u64(config.seed ^ stream)
        });
        DescriptorSizes {
            fixed: config.descriptor_bytes,
            cap: config.object_size,
            rng,
        }
    }

    #[inline]
    pub fn next_size(&mut self) -> usize {
        match &mut self.rng {
            None => self.fixed,
            Some(rng) => {
                let total: u32 = IMIX.iter().map(|(_, w)| w).sum();
                let mut pick = rng.gen_range(0..total);
                for (size, weight) in IMIX {
                    if pick < weight {
                        return size.min(self.cap);
                    }
                    pick -= weight;
                }
                unreachable!("weights cover the range")
            }
        }
    }
}

impl Iterator for DescriptorSizes {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.next_size())
    }
}
