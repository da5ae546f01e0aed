//! Shared setup for the criterion benches.

use turbomem::{HugePolicy, PoolConfig};

pub const OBJECT_SIZE: usize = 256;
pub const CAPACITY: usize = 1 << 16;

pub fn pool_config() -> PoolConfig {
    PoolConfig::new(OBJECT_SIZE, CAPACITY)
        .with_huge_policy(HugePolicy::AdviseHuge)
        .with_max_threads(8)
}
