//! CPU topology discovery and worker pinning.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::AffinityError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub cores: Vec<usize>,
    pub node_of_core: BTreeMap<usize, u32>,
    pub nodes: Vec<u32>,
}

impl Topology {
    /// One node holding `cores` cores.
    pub fn single_node(cores: usize) -> Self {
        let cores: Vec<usize> = (0..cores.max(1)).collect();
        Topology {
            node_of_core: cores.iter().map(|&c| (c, 0)).collect(),
            cores,
            nodes: vec![0],
        }
    }

    pub fn node_of(&self, core: usize) -> Option<u32> {
        self.node_of_core.get(&core).copied()
    }

    pub fn cores_of(&self, node: u32) -> impl Iterator<Item = usize> + '_ {
        self.cores
            .iter()
            .copied()
            .filter(move |c| self.node_of_core.get(c) == Some(&node))
    }

    pub fn has_node(&self, node: u32) -> bool {
        self.nodes.contains(&node)
    }
}

/// Reads the host topology from sysfs, falling back to a single node with
/// `available_parallelism` cores.
pub fn enumerate_topology() -> Topology {
    from_sysfs(Path::new("/sys/devices/system")).unwrap_or_else(|| {
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        Topology::single_node(n)
    })
}

fn from_sysfs(root: &Path) -> Option<Topology> {
    let online = fs::read_to_string(root.join("cpu/online")).ok()?;
    let cores = parse_cpu_list(&online)?;
    if cores.is_empty() {
        return None;
    }

    let mut node_of_core = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(root.join("node")) {
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(id) = name
                .to_str()
                .and_then(|n| n.strip_prefix("node"))
                .and_then(|n| n.parse::<u32>().ok())
            else {
                continue;
            };
            let Ok(list) = fs::read_to_string(entry.path().join("cpulist")) else {
                continue;
            };
            for cpu in parse_cpu_list(&list).unwrap_or_default() {
                node_of_core.insert(cpu, id);
            }
        }
    }
    // Cores sysfs did not attribute to a node land on node 0.
    for &c in &cores {
        node_of_core.entry(c).or_insert(0);
    }
    node_of_core.retain(|c, _| cores.contains(c));

    let mut nodes: Vec<u32> = node_of_core.values().copied().collect();
    nodes.sort_unstable();
    nodes.dedup();
    Some(Topology {
        cores,
        node_of_core,
        nodes,
    })
}

/// Parses the kernel's cpulist format, e.g. `0-3,8,10-11`.
pub fn parse_cpu_list(text: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().ok()?;
                let hi: usize = hi.trim().parse().ok()?;
                if hi < lo {
                    return None;
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.trim().parse().ok()?),
        }
    }
    Some(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinOutcome {
    Pinned(usize),
    /// The OS refused or cannot pin; the thread keeps running unpinned.
    Unpinned(String),
}

impl PinOutcome {
    pub fn is_pinned(&self) -> bool {
        matches!(self, PinOutcome::Pinned(_))
    }
}

/// Restricts the calling thread to `core_id` and confirms by readback.
pub fn pin_current_thread(core_id: usize) -> Result<PinOutcome, AffinityError> {
    pin_in(&enumerate_topology(), core_id)
}

pub fn pin_in(topology: &Topology, core_id: usize) -> Result<PinOutcome, AffinityError> {
    if !topology.cores.contains(&core_id) {
        return Err(AffinityError::UnknownCore(core_id));
    }
    Ok(os::pin(core_id))
}

/// Allowed CPU set of the calling thread, when the OS exposes it.
pub fn current_affinity() -> Option<Vec<usize>> {
    os::current()
}

#[cfg(target_os = "linux")]
mod os {
    use std::io;
    use std::mem;

    use super::PinOutcome;

    pub fn pin(core: usize) -> PinOutcome {
        if core >= libc::CPU_SETSIZE as usize {
            return PinOutcome::Unpinned(format!("core {core} beyond CPU_SETSIZE"));
        }
        // SAFETY: cpu_set_t is plain data; pid 0 targets the calling thread.
        let rc = unsafe {
            let mut set: libc::cpu_set_t = mem::zeroed();
            libc::CPU_SET(core, &mut set);
            libc::sched_setaffinity(0, mem::size_of::<libc::cpu_set_t>(), &set)
        };
        if rc != 0 {
            return PinOutcome::Unpinned(io::Error::last_os_error().to_string());
        }
        match current() {
            Some(set) if set == [core] => PinOutcome::Pinned(core),
            other => PinOutcome::Unpinned(format!("readback mismatch: {other:?}")),
        }
    }

    pub fn current() -> Option<Vec<usize>> {
        // SAFETY: as above.
        unsafe {
            let mut set: libc::cpu_set_t = mem::zeroed();
            if libc::sched_getaffinity(0, mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
                return None;
            }
            Some(
                (0..libc::CPU_SETSIZE as usize)
                    .filter(|&c| libc::CPU_ISSET(c, &set))
                    .collect(),
            )
        }
    }
}

#[cfg(not(target_os = "linux"))]
mod os {
    use super::PinOutcome;

    pub fn pin(_core: usize) -> PinOutcome {
        PinOutcome::Unpinned("thread affinity unsupported on this OS".into())
    }

    pub fn current() -> Option<Vec<usize>> {
        None
    }
}
