#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use pilot_core::emulator::TaskPayload;
use pilot_core::executor::LatencyModel;
use pilot_core::model::{Backend, PilotDescription, Slot, UnitDescription, UnitId};
use pilot_core::runtime::{Session, SessionOptions};

pub fn units(n: usize, cores: usize, payload: TaskPayload) -> Vec<UnitDescription> {
    (0..n)
        .map(|i| UnitDescription::new(UnitId::indexed(i), cores, payload.clone()))
        .collect()
}

pub fn pilot(cores: usize, cores_per_node: usize, backend: Backend, latency: LatencyModel) -> PilotDescription {
    let mut p = PilotDescription::new(cores / cores_per_node, cores_per_node);
    p.backend = backend;
    p.latency = latency;
    p
}

pub fn session(dir: &Path, pilot: PilotDescription, units: Vec<UnitDescription>, options: SessionOptions) -> Session {
    Session {
        id: "test".into(),
        pilot,
        units,
        options,
        dir: dir.to_path_buf(),
    }
}

/// Reference allocator that tries every placement the first-fit rules
/// allow, in node order, straight from a set of free slots.
pub struct BruteForce {
    pub nodes: usize,
    pub cores_per_node: usize,
    pub free: BTreeSet<Slot>,
}

impl BruteForce {
    pub fn new(nodes: usize, cores_per_node: usize) -> Self {
        BruteForce {
            nodes,
            cores_per_node,
            free: (0..nodes)
                .flat_map(|n| (0..cores_per_node).map(move |c| Slot { node: n, core: c }))
                .collect(),
        }
    }

    fn node_free(&self, n: usize) -> Vec<Slot> {
        self.free.iter().filter(|s| s.node == n).copied().collect()
    }

    /// Lowest node with enough free cores (taking its lowest free cores) for
    /// a single-node request; lowest run of entirely free consecutive nodes
    /// otherwise.
    pub fn schedule(&mut self, cores: usize) -> Option<Vec<Slot>> {
        let picked: Vec<Slot> = if cores <= self.cores_per_node {
            (0..self.nodes)
                .map(|n| self.node_free(n))
                .find(|f| f.len() >= cores)?
                .into_iter()
                .take(cores)
                .collect()
        } else {
            let span = cores.div_ceil(self.cores_per_node);
            let start = (0..=self.nodes.checked_sub(span)?)
                .find(|&s| (s..s + span).all(|n| self.node_free(n).len() == self.cores_per_node))?;
            (start..start + span)
                .flat_map(|n| (0..self.cores_per_node).map(move |c| Slot { node: n, core: c }))
                .take(cores)
                .collect()
        };
        for s in &picked {
            self.free.remove(s);
        }
        Some(picked)
    }

    pub fn release(&mut self, slots: &[Slot]) {
        for s in slots {
            assert!(self.free.insert(*s), "double release in the oracle");
        }
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Schedule(usize),
    /// Release the live allocation at this index, modulo the live count.
    Release(usize),
}

/// Replays `ops` on the continuous scheduler and on [`BruteForce`],
/// comparing placements and free-slot sets after every operation.
pub fn replay_against_oracle(nodes: usize, cores_per_node: usize, ops: &[Op]) -> Result<usize, String> {
    use pilot_core::model::ResourceModel;
    use pilot_core::scheduler::{ContinuousScheduler, SlotScheduler};

    let mut sched = ContinuousScheduler::new(ResourceModel::uniform(nodes, cores_per_node));
    let mut oracle = BruteForce::new(nodes, cores_per_node);
    let mut live = Vec::new();
    let mut checked = 0;
    for (i, op) in ops.iter().enumerate() {
        match op {
            Op::Schedule(cores) => {
                let id = UnitId::indexed(i);
                let got = match sched.schedule(&id, *cores) {
                    Ok(a) => a.allocation,
                    Err(_) => None,
                };
                let want = if *cores <= nodes * cores_per_node {
                    oracle.schedule(*cores)
                } else {
                    None
                };
                match (got, want) {
                    (Some(a), Some(w)) => {
                        if a.slots != w {
                            return Err(format!("op {i}: placed {:?}, oracle {:?}", a.slots, w));
                        }
                        live.push(a);
                    }
                    (None, None) => {}
                    (g, w) => return Err(format!("op {i}: scheduler {g:?}, oracle {w:?}")),
                }
            }
            Op::Release(k) => {
                if live.is_empty() {
                    continue;
                }
                let a = live.swap_remove(k % live.len());
                sched.unschedule(&a).map_err(|e| format!("op {i}: {e}"))?;
                oracle.release(&a.slots);
            }
        }
        if sched.free_slots() != oracle.free {
            return Err(format!("op {i}: free sets differ"));
        }
        checked += 1;
    }
    Ok(checked)
}
