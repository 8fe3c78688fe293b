//! Core placement: a first-fit continuous search over the node list and a
//! constant-time block free list for homogeneous workloads, plus the
//! sequential FIFO loop that drives either of them.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{Allocation, ComputeUnit, ResourceModel, Slot, UnitId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "continuous")]
    ContinuousSearch,
    #[serde(rename = "homogeneous")]
    HomogeneousLookup,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::ContinuousSearch => "continuous",
            SchedulerKind::HomogeneousLookup => "homogeneous",
        }
    }

    pub fn parse(s: &str) -> Option<SchedulerKind> {
        match s {
            "continuous" => Some(SchedulerKind::ContinuousSearch),
            "homogeneous" => Some(SchedulerKind::HomogeneousLookup),
            _ => None,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SchedError {
    #[error("unit {unit} requests {cores} cores but the pilot has {total}")]
    UnitTooLarge {
        unit: UnitId,
        cores: usize,
        total: usize,
    },
    #[error("unit {unit} requests {cores} cores, block size is {block_size}")]
    BlockSizeMismatch {
        unit: UnitId,
        cores: usize,
        block_size: usize,
    },
    #[error("allocation of {unit} was already released")]
    DoubleFree { unit: UnitId },
    #[error("allocation of {unit} does not belong to this scheduler")]
    UnknownAllocation { unit: UnitId },
    #[error("unit {unit} requests zero cores")]
    EmptyRequest { unit: UnitId },
    #[error("block size {block_size} neither divides nor is a multiple of {cores_per_node} cores per node")]
    InvalidBlockSize {
        block_size: usize,
        cores_per_node: usize,
    },
}

/// Outcome of one placement attempt. `allocation` is `None` when nothing
/// fits right now. `probes` counts the core states the search inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub allocation: Option<Allocation>,
    pub probes: u64,
}

/// First-fit search over the ordered node list.
///
/// Units that fit on one node get the lowest free cores of the first node
/// with enough of them. Larger units need `ceil(cores / cores_per_node)`
/// consecutive, entirely free nodes and receive their cores in node order.
/// On `NoFit` the model is left untouched.
pub fn schedule_continuous(
    unit: &UnitId,
    cores: usize,
    model: &mut ResourceModel,
) -> Result<Attempt, SchedError> {
    let total = model.total_cores();
    if cores == 0 {
        return Err(SchedError::EmptyRequest { unit: unit.clone() });
    }
    if cores > total {
        return Err(SchedError::UnitTooLarge {
            unit: unit.clone(),
            cores,
            total,
        });
    }
    let cpn = model.cores_per_node();
    let mut probes = 0u64;
    let mut slots = Vec::with_capacity(cores);

    if cores <= cpn {
        for node in 0..model.node_count() {
            slots.clear();
            for core in 0..cpn {
                probes += 1;
                if !model.core_busy(node, core) {
                    slots.push(Slot { node, core });
                    if slots.len() == cores {
                        break;
                    }
                }
            }
            if slots.len() == cores {
                model.occupy(&slots);
                return Ok(placed(unit, slots, probes));
            }
        }
    } else {
        let needed = cores.div_ceil(cpn);
        let mut run_start = 0;
        let mut run = 0;
        for node in 0..model.node_count() {
            let mut whole = true;
            for core in 0..cpn {
                probes += 1;
                if model.core_busy(node, core) {
                    whole = false;
                    break;
                }
            }
            if !whole {
                run = 0;
                continue;
            }
            if run == 0 {
                run_start = node;
            }
            run += 1;
            if run == needed {
                slots.extend(
                    (run_start..run_start + needed)
                        .flat_map(|n| (0..cpn).map(move |c| Slot { node: n, core: c }))
                        .take(cores),
                );
                model.occupy(&slots);
                return Ok(placed(unit, slots, probes));
            }
        }
    }
    Ok(Attempt {
        allocation: None,
        probes,
    })
}

fn placed(unit: &UnitId, slots: Vec<Slot>, probes: u64) -> Attempt {
    Attempt {
        allocation: Some(Allocation {
            unit: unit.clone(),
            slots,
            block: None,
        }),
        probes,
    }
}

/// Precomputed equal-sized core blocks kept on a stack.
///
/// Blocks are either `block_size / cores_per_node` whole consecutive nodes,
/// or `cores_per_node / block_size` disjoint pieces of one node. Nodes left
/// over when the node count is not a multiple of the block span are never
/// handed out.
#[derive(Debug, Clone)]
pub struct BlockFreeList {
    block_size: usize,
    blocks: Vec<Vec<Slot>>,
    free: Vec<usize>,
    live: Vec<bool>,
}

impl BlockFreeList {
    pub fn new(model: &ResourceModel, block_size: usize) -> Result<Self, SchedError> {
        let cpn = model.cores_per_node();
        let mut blocks = Vec::new();
        if block_size > 0 && block_size.is_multiple_of(cpn) {
            let span = block_size / cpn;
            for first in (0..model.node_count() / span).map(|b| b * span) {
                blocks.push(
                    (first..first + span)
                        .flat_map(|n| (0..cpn).map(move |c| Slot { node: n, core: c }))
                        .collect(),
                );
            }
        } else if block_size > 0 && cpn.is_multiple_of(block_size) {
            for node in 0..model.node_count() {
                for piece in 0..cpn / block_size {
                    blocks.push(
                        (piece * block_size..(piece + 1) * block_size)
                            .map(|core| Slot { node, core })
                            .collect(),
                    );
                }
            }
        } else {
            return Err(SchedError::InvalidBlockSize {
                block_size,
                cores_per_node: cpn,
            });
        }
        let n = blocks.len();
        Ok(BlockFreeList {
            block_size,
            blocks,
            // popped from the back: lowest block first
            free: (0..n).rev().collect(),
            live: vec![false; n],
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn free_blocks(&self) -> usize {
        self.free.len()
    }

    pub fn capacity_cores(&self) -> usize {
        self.blocks.len() * self.block_size
    }
}

/// Pops one block. Constant time in the pilot size.
pub fn schedule_homogeneous(
    unit: &UnitId,
    cores: usize,
    freelist: &mut BlockFreeList,
) -> Result<Attempt, SchedError> {
    if cores != freelist.block_size {
        return Err(SchedError::BlockSizeMismatch {
            unit: unit.clone(),
            cores,
            block_size: freelist.block_size,
        });
    }
    let Some(block) = freelist.free.pop() else {
        return Ok(Attempt {
            allocation: None,
            probes: 1,
        });
    };
    freelist.live[block] = true;
    Ok(Attempt {
        allocation: Some(Allocation {
            unit: unit.clone(),
            slots: freelist.blocks[block].clone(),
            block: Some(block),
        }),
        probes: 1,
    })
}

pub fn unschedule_block(alloc: &Allocation, freelist: &mut BlockFreeList) -> Result<(), SchedError> {
    let block = match alloc.block {
        Some(b) if b < freelist.blocks.len() && freelist.blocks[b] == alloc.slots => b,
        _ => return Err(SchedError::UnknownAllocation { unit: alloc.unit.clone() }),
    };
    if !freelist.live[block] {
        return Err(SchedError::DoubleFree { unit: alloc.unit.clone() });
    }
    freelist.live[block] = false;
    freelist.free.push(block);
    Ok(())
}

pub fn unschedule_slots(alloc: &Allocation, model: &mut ResourceModel) -> Result<(), SchedError> {
    let in_range = alloc
        .slots
        .iter()
        .all(|s| s.node < model.node_count() && s.core < model.cores_per_node());
    if !in_range {
        return Err(SchedError::UnknownAllocation { unit: alloc.unit.clone() });
    }
    if model.release(&alloc.slots) {
        Ok(())
    } else {
        Err(SchedError::DoubleFree { unit: alloc.unit.clone() })
    }
}

/// Common interface of the two schedulers.
pub trait SlotScheduler: Send {
    fn kind(&self) -> SchedulerKind;
    fn schedule(&mut self, unit: &UnitId, cores: usize) -> Result<Attempt, SchedError>;
    /// Returns the number of probes spent releasing the slots.
    fn unschedule(&mut self, alloc: &Allocation) -> Result<u64, SchedError>;
    fn total_cores(&self) -> usize;
    fn free_cores(&self) -> usize;
    fn free_slots(&self) -> BTreeSet<Slot>;
}

#[derive(Debug, Clone)]
pub struct ContinuousScheduler {
    model: ResourceModel,
}

impl ContinuousScheduler {
    pub fn new(model: ResourceModel) -> Self {
        ContinuousScheduler { model }
    }

    pub fn model(&self) -> &ResourceModel {
        &self.model
    }
}

impl SlotScheduler for ContinuousScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::ContinuousSearch
    }

    fn schedule(&mut self, unit: &UnitId, cores: usize) -> Result<Attempt, SchedError> {
        schedule_continuous(unit, cores, &mut self.model)
    }

    fn unschedule(&mut self, alloc: &Allocation) -> Result<u64, SchedError> {
        unschedule_slots(alloc, &mut self.model)?;
        Ok(alloc.slots.len() as u64)
    }

    fn total_cores(&self) -> usize {
        self.model.total_cores()
    }

    fn free_cores(&self) -> usize {
        self.model.free_cores()
    }

    fn free_slots(&self) -> BTreeSet<Slot> {
        self.model.free_slots()
    }
}

#[derive(Debug, Clone)]
pub struct HomogeneousScheduler {
    freelist: BlockFreeList,
    total: usize,
    cores_per_node: usize,
    node_count: usize,
}

impl HomogeneousScheduler {
    pub fn new(model: &ResourceModel, block_size: usize) -> Result<Self, SchedError> {
        Ok(HomogeneousScheduler {
            freelist: BlockFreeList::new(model, block_size)?,
            total: model.total_cores(),
            cores_per_node: model.cores_per_node(),
            node_count: model.node_count(),
        })
    }

    pub fn freelist(&self) -> &BlockFreeList {
        &self.freelist
    }
}

impl SlotScheduler for HomogeneousScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::HomogeneousLookup
    }

    fn schedule(&mut self, unit: &UnitId, cores: usize) -> Result<Attempt, SchedError> {
        if cores > self.total {
            return Err(SchedError::UnitTooLarge {
                unit: unit.clone(),
                cores,
                total: self.total,
            });
        }
        schedule_homogeneous(unit, cores, &mut self.freelist)
    }

    fn unschedule(&mut self, alloc: &Allocation) -> Result<u64, SchedError> {
        unschedule_block(alloc, &mut self.freelist)?;
        Ok(1)
    }

    fn total_cores(&self) -> usize {
        self.total
    }

    /// Free cores, counting cores outside any block as free.
    fn free_cores(&self) -> usize {
        self.total - (self.freelist.block_count() - self.freelist.free_blocks()) * self.freelist.block_size
    }

    fn free_slots(&self) -> BTreeSet<Slot> {
        let mut all: BTreeSet<Slot> = (0..self.node_count)
            .flat_map(|n| (0..self.cores_per_node).map(move |c| Slot { node: n, core: c }))
            .collect();
        for (b, live) in self.freelist.live.iter().enumerate() {
            if *live {
                for s in &self.freelist.blocks[b] {
                    all.remove(s);
                }
            }
        }
        all
    }
}

/// Builds a scheduler of `kind` over `model`. `block_size` is the common
/// unit size and is only used by the homogeneous scheduler.
pub fn build_scheduler(
    kind: SchedulerKind,
    model: ResourceModel,
    block_size: usize,
) -> Result<Box<dyn SlotScheduler>, SchedError> {
    Ok(match kind {
        SchedulerKind::ContinuousSearch => Box::new(ContinuousScheduler::new(model)),
        SchedulerKind::HomogeneousLookup => Box::new(HomogeneousScheduler::new(&model, block_size)?),
    })
}

/// Generations needed by `n_tasks` equal tasks: `ceil(n / floor(pilot / per_task))`.
pub fn generation_count(n_tasks: usize, pilot_cores: usize, cores_per_task: usize) -> Option<usize> {
    let width = pilot_cores.checked_div(cores_per_task)?;
    if width == 0 {
        return None;
    }
    Some(n_tasks.div_ceil(width))
}

/// What one call to [`SchedulerLoop::step`] did.
#[derive(Debug)]
pub enum Step {
    /// A finished unit's slots went back to the pool.
    Unscheduled {
        unit: ComputeUnit,
        probes: u64,
        service: Duration,
    },
    /// The head unit received an allocation (stored on the unit).
    Scheduled {
        unit: ComputeUnit,
        probes: u64,
        service: Duration,
        generation: u32,
    },
    /// The head unit does not fit; the loop waits for a release.
    NoFit { probes: u64, service: Duration },
    /// The head unit can never be placed on this pilot.
    Rejected { unit: ComputeUnit, error: SchedError },
    /// Nothing to do until a unit or a release arrives.
    Idle,
}

/// Sequential scheduler worker state.
///
/// Units are attempted strictly in arrival order. A unit that does not fit
/// blocks the queue until a release comes in; pending releases are always
/// drained before the head is retried.
pub struct SchedulerLoop {
    sched: Box<dyn SlotScheduler>,
    pending: VecDeque<ComputeUnit>,
    releases: VecDeque<ComputeUnit>,
    blocked: bool,
    live: usize,
    cores_per_node: usize,
    slot_generation: Vec<u32>,
    max_generation: u32,
}

impl SchedulerLoop {
    pub fn new(sched: Box<dyn SlotScheduler>, cores_per_node: usize) -> Self {
        let total = sched.total_cores();
        SchedulerLoop {
            sched,
            pending: VecDeque::new(),
            releases: VecDeque::new(),
            blocked: false,
            live: 0,
            cores_per_node,
            slot_generation: vec![0; total],
            max_generation: 0,
        }
    }

    pub fn enqueue(&mut self, unit: ComputeUnit) {
        self.pending.push_back(unit);
    }

    /// Hands back a unit whose allocation is to be released.
    pub fn release(&mut self, unit: ComputeUnit) {
        self.releases.push_back(unit);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked
    }

    pub fn has_work(&self) -> bool {
        !self.releases.is_empty() || (!self.blocked && !self.pending.is_empty())
    }

    /// Highest slot-lineage generation handed out so far: a unit's
    /// generation is one more than the latest generation that used any of
    /// its slots.
    pub fn generations(&self) -> u32 {
        self.max_generation
    }

    pub fn scheduler(&self) -> &dyn SlotScheduler {
        self.sched.as_ref()
    }

    /// Removes every unit still waiting for placement.
    pub fn drain_pending(&mut self) -> Vec<ComputeUnit> {
        self.blocked = false;
        self.pending.drain(..).collect()
    }

    /// Removes released units whose slots have not been reclaimed yet.
    pub fn drain_releases(&mut self) -> Vec<ComputeUnit> {
        self.releases.drain(..).collect()
    }

    pub fn step(&mut self) -> Result<Step, SchedError> {
        if let Some(unit) = self.releases.pop_front() {
            let Some(alloc) = unit.allocation.as_ref() else {
                return Err(SchedError::UnknownAllocation { unit: unit.id().clone() });
            };
            let start = Instant::now();
            let probes = self.sched.unschedule(alloc)?;
            let service = start.elapsed();
            self.live -= 1;
            self.blocked = false;
            return Ok(Step::Unscheduled {
                unit,
                probes,
                service,
            });
        }
        if self.blocked {
            return Ok(Step::Idle);
        }
        let Some(head) = self.pending.front() else {
            return Ok(Step::Idle);
        };
        let start = Instant::now();
        let result = self.sched.schedule(head.id(), head.desc.cores);
        let service = start.elapsed();
        match result {
            Ok(Attempt {
                allocation: Some(alloc),
                probes,
            }) => {
                let mut unit = self.pending.pop_front().expect("head exists");
                let generation = self.assign_generation(&alloc.slots);
                unit.allocation = Some(alloc);
                self.live += 1;
                Ok(Step::Scheduled {
                    unit,
                    probes,
                    service,
                    generation,
                })
            }
            Ok(Attempt {
                allocation: None,
                probes,
            }) => {
                self.blocked = true;
                Ok(Step::NoFit { probes, service })
            }
            Err(error @ (SchedError::UnitTooLarge { .. }
            | SchedError::BlockSizeMismatch { .. }
            | SchedError::EmptyRequest { .. })) => {
                let unit = self.pending.pop_front().expect("head exists");
                Ok(Step::Rejected { unit, error })
            }
            Err(e) => Err(e),
        }
    }

    fn assign_generation(&mut self, slots: &[Slot]) -> u32 {
        let idx = |s: &Slot| s.node * self.cores_per_node + s.core;
        let generation = 1 + slots
            .iter()
            .map(|s| self.slot_generation[idx(s)])
            .max()
            .unwrap_or(0);
        for s in slots {
            let i = idx(s);
            self.slot_generation[i] = generation;
        }
        self.max_generation = self.max_generation.max(generation);
        generation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::TaskPayload;
    use crate::model::UnitDescription;

    fn id(i: usize) -> UnitId {
        UnitId::indexed(i)
    }

    fn unit(i: usize, cores: usize) -> ComputeUnit {
        ComputeUnit::new(
            UnitDescription::new(id(i), cores, TaskPayload::sleep(1.0, 0.0)),
            1.0,
            0.0,
        )
    }

    #[test]
    fn multi_node_unit_takes_two_whole_nodes() {
        let mut m = ResourceModel::uniform(4, 16);
        let a = schedule_continuous(&id(0), 32, &mut m).unwrap().allocation.unwrap();
        assert_eq!(a.slots.len(), 32);
        let nodes: BTreeSet<usize> = a.slots.iter().map(|s| s.node).collect();
        assert_eq!(nodes, BTreeSet::from([0, 1]));
        assert_eq!(m.free_cores(), 32);
    }

    #[test]
    fn exact_fit_on_single_node() {
        let mut m = ResourceModel::uniform(2, 8);
        // leave exactly 4 free cores on node 0, fill node 1
        let filler: Vec<Slot> = (0..4).map(|c| Slot { node: 0, core: c }).collect();
        m.occupy(&filler);
        let rest: Vec<Slot> = (0..8).map(|c| Slot { node: 1, core: c }).collect();
        m.occupy(&rest);
        let a = schedule_continuous(&id(1), 4, &mut m).unwrap().allocation.unwrap();
        assert_eq!(a.slots, (4..8).map(|c| Slot { node: 0, core: c }).collect::<Vec<_>>());
        assert_eq!(m.free_cores(), 0);
    }

    #[test]
    fn single_node_units_never_span_nodes() {
        let mut m = ResourceModel::uniform(2, 4);
        m.occupy(&[Slot { node: 0, core: 0 }, Slot { node: 1, core: 0 }]);
        let before = m.clone();
        let attempt = schedule_continuous(&id(0), 4, &mut m).unwrap();
        assert!(attempt.allocation.is_none());
        assert_eq!(m, before, "NoFit leaves the model unchanged");
    }

    #[test]
    fn multi_node_needs_consecutive_nodes() {
        let mut m = ResourceModel::uniform(3, 2);
        m.occupy(&[Slot { node: 1, core: 0 }]);
        assert!(schedule_continuous(&id(0), 4, &mut m).unwrap().allocation.is_none());
        m.release(&[Slot { node: 1, core: 0 }]);
        m.occupy(&[Slot { node: 0, core: 1 }]);
        let a = schedule_continuous(&id(0), 3, &mut m).unwrap().allocation.unwrap();
        assert_eq!(
            a.slots,
            vec![
                Slot { node: 1, core: 0 },
                Slot { node: 1, core: 1 },
                Slot { node: 2, core: 0 }
            ]
        );
    }

    #[test]
    fn too_large_is_permanent_error() {
        let mut m = ResourceModel::uniform(2, 4);
        assert!(matches!(
            schedule_continuous(&id(0), 9, &mut m),
            Err(SchedError::UnitTooLarge { total: 8, .. })
        ));
    }

    #[test]
    fn schedule_then_unschedule_restores_model() {
        let initial = ResourceModel::uniform(4, 4);
        let mut m = initial.clone();
        let a = schedule_continuous(&id(0), 6, &mut m).unwrap().allocation.unwrap();
        unschedule_slots(&a, &mut m).unwrap();
        assert_eq!(m, initial);
        assert_eq!(
            unschedule_slots(&a, &mut m),
            Err(SchedError::DoubleFree { unit: id(0) })
        );
    }

    #[test]
    fn block_list_pops_lowest_block_first() {
        let m = ResourceModel::uniform(8, 16);
        let mut fl = BlockFreeList::new(&m, 32).unwrap();
        assert_eq!(fl.block_count(), 4);
        let a = schedule_homogeneous(&id(0), 32, &mut fl).unwrap().allocation.unwrap();
        assert_eq!(a.block, Some(0));
        assert_eq!(a.slots.len(), 32);
        assert_eq!(fl.free_blocks(), 3);
        assert_eq!(fl.free_blocks() * 32 + 32, m.total_cores());
    }

    #[test]
    fn block_list_sub_node_blocks() {
        let m = ResourceModel::uniform(2, 16);
        let fl = BlockFreeList::new(&m, 4).unwrap();
        assert_eq!(fl.block_count(), 8);
        assert!(matches!(
            BlockFreeList::new(&m, 5),
            Err(SchedError::InvalidBlockSize { .. })
        ));
    }

    #[test]
    fn empty_block_list_is_nofit() {
        let m = ResourceModel::uniform(2, 16);
        let mut fl = BlockFreeList::new(&m, 32).unwrap();
        schedule_homogeneous(&id(0), 32, &mut fl).unwrap();
        assert!(schedule_homogeneous(&id(1), 32, &mut fl).unwrap().allocation.is_none());
    }

    #[test]
    fn block_size_mismatch() {
        let m = ResourceModel::uniform(2, 16);
        let mut fl = BlockFreeList::new(&m, 32).unwrap();
        assert!(matches!(
            schedule_homogeneous(&id(0), 16, &mut fl),
            Err(SchedError::BlockSizeMismatch { .. })
        ));
    }

    #[test]
    fn block_double_free() {
        let m = ResourceModel::uniform(2, 16);
        let mut fl = BlockFreeList::new(&m, 16).unwrap();
        let a = schedule_homogeneous(&id(0), 16, &mut fl).unwrap().allocation.unwrap();
        unschedule_block(&a, &mut fl).unwrap();
        assert_eq!(fl.free_blocks(), 2);
        assert_eq!(
            unschedule_block(&a, &mut fl),
            Err(SchedError::DoubleFree { unit: id(0) })
        );
    }

    #[test]
    fn generation_law() {
        assert_eq!(generation_count(16384, 16384, 32), Some(32));
        assert_eq!(generation_count(16384, 32768, 32), Some(16));
        assert_eq!(generation_count(16384, 65536, 32), Some(8));
        assert_eq!(generation_count(8, 32, 4), Some(1));
        assert_eq!(generation_count(1, 2, 4), None);
    }

    /// Schedules until blocked, then releases the oldest running unit.
    fn drive(mut lp: SchedulerLoop, n: usize, cores: usize) -> (u32, usize) {
        for i in 0..n {
            lp.enqueue(unit(i, cores));
        }
        let mut running = VecDeque::new();
        let mut peak = 0;
        let mut done = 0;
        while done < n {
            match lp.step().unwrap() {
                Step::Scheduled { unit, .. } => {
                    running.push_back(unit);
                    peak = peak.max(running.len());
                }
                Step::Unscheduled { .. } => done += 1,
                Step::NoFit { .. } | Step::Idle => {
                    let u = running.pop_front().expect("something is running");
                    lp.release(u);
                }
                Step::Rejected { .. } => unreachable!(),
            }
        }
        (lp.generations(), peak)
    }

    #[test]
    fn loop_single_generation() {
        let m = ResourceModel::uniform(2, 16);
        let lp = SchedulerLoop::new(Box::new(ContinuousScheduler::new(m)), 16);
        assert_eq!(drive(lp, 8, 4), (1, 8));
    }

    #[test]
    fn loop_unit_sized_pilot() {
        let m = ResourceModel::uniform(1, 4);
        let mut lp = SchedulerLoop::new(Box::new(ContinuousScheduler::new(m)), 4);
        lp.enqueue(unit(0, 4));
        assert!(matches!(lp.step().unwrap(), Step::Scheduled { generation: 1, .. }));
    }

    #[test]
    fn loop_strong_scaling_generations() {
        for (cores, expect) in [(16384, 32), (32768, 16), (65536, 8)] {
            let m = ResourceModel::uniform(cores / 16, 16);
            let lp = SchedulerLoop::new(
                Box::new(HomogeneousScheduler::new(&m, 32).unwrap()),
                16,
            );
            assert_eq!(drive(lp, 16384, 32).0, expect);
        }
    }

    #[test]
    fn loop_blocks_head_of_line() {
        // 8-core pilot: a 6-core unit running, then 4-core head blocks a 1-core unit
        let m = ResourceModel::uniform(1, 8);
        let mut lp = SchedulerLoop::new(Box::new(ContinuousScheduler::new(m)), 8);
        lp.enqueue(unit(0, 6));
        lp.enqueue(unit(1, 4));
        lp.enqueue(unit(2, 1));
        let first = match lp.step().unwrap() {
            Step::Scheduled { unit, .. } => unit,
            other => panic!("{other:?}"),
        };
        assert!(matches!(lp.step().unwrap(), Step::NoFit { .. }));
        assert!(matches!(lp.step().unwrap(), Step::Idle));
        assert_eq!(lp.pending(), 2);
        lp.release(first);
        assert!(matches!(lp.step().unwrap(), Step::Unscheduled { .. }));
        match lp.step().unwrap() {
            Step::Scheduled { unit, .. } => assert_eq!(unit.id(), &id(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loop_rejects_oversized_and_continues() {
        let m = ResourceModel::uniform(1, 4);
        let mut lp = SchedulerLoop::new(Box::new(ContinuousScheduler::new(m)), 4);
        lp.enqueue(unit(0, 5));
        lp.enqueue(unit(1, 2));
        assert!(matches!(lp.step().unwrap(), Step::Rejected { .. }));
        assert!(matches!(lp.step().unwrap(), Step::Scheduled { .. }));
    }

    #[test]
    fn homogeneous_and_continuous_agree_on_generations() {
        for (n, nodes) in [(40, 8), (100, 16), (7, 2)] {
            let m = ResourceModel::uniform(nodes, 16);
            let c = drive(SchedulerLoop::new(Box::new(ContinuousScheduler::new(m.clone())), 16), n, 32);
            let h = drive(
                SchedulerLoop::new(Box::new(HomogeneousScheduler::new(&m, 32).unwrap()), 16),
                n,
                32,
            );
            assert_eq!(c, h);
        }
    }
}
