//! Virtual backend: a discrete-event simulation of the agent pipeline on
//! one logical clock.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::num::NonZeroUsize;

use crate::emulator::sample_duration;
use crate::model::{ComputeUnit, ResourceModel, UnitId, UnitState};
use crate::profiler::EventName;
use crate::scheduler::{build_scheduler, SchedulerLoop, Step};
use crate::Seconds;

use super::{unit_rng, BackendRun, Recorders, RuntimeError, SchedulerCost, Session, SessionStatus, WorkloadStore};

#[derive(Debug, Clone, Copy)]
enum Ev {
    SchedulerWake,
    ExecutorFree(usize),
    PayloadStart(usize),
    PayloadStop(usize),
    SpawnReturn(usize),
    Walltime,
}

struct Queued {
    time: Seconds,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

struct Sim {
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    units: Vec<Option<ComputeUnit>>,
    index: HashMap<UnitId, usize>,
    prepare: Vec<Seconds>,
    ack: Vec<Seconds>,
    worker_of: Vec<usize>,
    sched: SchedulerLoop,
    sched_busy: bool,
    inflight: Option<(Seconds, Step)>,
    exec_queue: VecDeque<usize>,
    free_workers: VecDeque<usize>,
    cost: SchedulerCost,
    service: Seconds,
    terminal: usize,
    rec: Recorders,
}

pub(crate) fn run(
    session: &Session,
    model: ResourceModel,
    block: usize,
    executors: usize,
    rec: Recorders,
) -> Result<BackendRun, RuntimeError> {
    let opts = &session.options;
    let pilot_cores = model.total_cores();
    let cpn = model.cores_per_node();
    let latency = session.pilot.latency;
    let n = session.units.len();
    let mut sim = Sim {
        heap: BinaryHeap::new(),
        seq: 0,
        units: Vec::with_capacity(n),
        index: HashMap::with_capacity(n),
        prepare: Vec::with_capacity(n),
        ack: Vec::with_capacity(n),
        worker_of: vec![0; n],
        sched: SchedulerLoop::new(build_scheduler(opts.scheduler, model, block)?, cpn),
        sched_busy: false,
        inflight: None,
        exec_queue: VecDeque::new(),
        free_workers: (0..executors).collect(),
        cost: opts.cost,
        service: opts.executor_service,
        terminal: 0,
        rec,
    };

    let mut store = WorkloadStore::in_memory(session.units.clone())?;
    let batch = opts.pull_batch.unwrap_or(NonZeroUsize::MIN.saturating_add(n));
    loop {
        let pulled = store.pull_units(batch);
        if pulled.is_empty() {
            break;
        }
        for desc in pulled {
            let i = sim.units.len();
            let mut rng = unit_rng(opts.seed, i);
            let duration = sample_duration(&desc.payload, &mut rng);
            sim.prepare.push(latency.sample_prepare(&mut rng));
            sim.ack.push(latency.sample_ack(&mut rng, pilot_cores));
            let mut unit = ComputeUnit::new(desc, duration, 0.0);
            sim.rec.db.record(EventName::DbPull, 0.0, Some(unit.id()));
            unit.transition(UnitState::PendingSchedule, 0.0, &mut sim.rec.db)?;
            sim.index.insert(unit.id().clone(), i);
            sim.units.push(None);
            sim.sched.enqueue(unit);
        }
    }
    sim.push(session.pilot.walltime, Ev::Walltime);
    sim.scheduler_step(0.0)?;

    let mut end = 0.0;
    let mut status = SessionStatus::Completed;
    while let Some(Reverse(q)) = sim.heap.pop() {
        if let Ev::Walltime = q.ev {
            if sim.terminal < n {
                status = SessionStatus::Aborted;
                sim.abort(q.time)?;
                end = q.time;
            }
            break;
        }
        end = q.time;
        sim.handle(q.time, q.ev)?;
    }
    let units = sim
        .units
        .into_iter()
        .map(|u| u.expect("every unit is back in the slab"))
        .collect();
    Ok(BackendRun {
        units,
        generations: sim.sched.generations(),
        status,
        end,
        recorders: sim.rec,
    })
}

impl Sim {
    fn push(&mut self, time: Seconds, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse(Queued {
            time,
            seq: self.seq,
            ev,
        }));
    }

    fn put(&mut self, unit: ComputeUnit) -> usize {
        let i = self.index[unit.id()];
        self.units[i] = Some(unit);
        i
    }

    fn unit(&mut self, i: usize) -> &mut ComputeUnit {
        self.units[i].as_mut().expect("unit is in the slab")
    }

    fn scheduler_step(&mut self, now: Seconds) -> Result<(), RuntimeError> {
        if self.sched_busy {
            return Ok(());
        }
        let step = self.sched.step()?;
        if let Step::Idle = step {
            return Ok(());
        }
        let cost = self.cost.of(&step);
        self.sched_busy = true;
        self.inflight = Some((now, step));
        self.push(now + cost, Ev::SchedulerWake);
        Ok(())
    }

    fn handle(&mut self, now: Seconds, ev: Ev) -> Result<(), RuntimeError> {
        match ev {
            Ev::SchedulerWake => {
                let (start, step) = self.inflight.take().expect("wake follows a step");
                self.sched_busy = false;
                self.finish_step(start, now, step)?;
                self.scheduler_step(now)?;
            }
            Ev::ExecutorFree(w) => {
                self.free_workers.push_back(w);
                self.dispatch(now);
            }
            Ev::PayloadStart(i) => {
                let w = self.worker_of[i];
                let unit = self.units[i].as_mut().expect("unit is in the slab");
                let rec = &mut self.rec.executors[w];
                rec.record(EventName::PayloadStart, now, Some(&unit.desc.id));
                unit.transition(UnitState::Executing, now, rec)?;
                let stop = now + unit.duration;
                self.push(stop, Ev::PayloadStop(i));
            }
            Ev::PayloadStop(i) => {
                let w = self.worker_of[i];
                let id = self.unit(i).desc.id.clone();
                self.rec.executors[w].record(EventName::PayloadStop, now, Some(&id));
                self.push(now + self.ack[i], Ev::SpawnReturn(i));
            }
            Ev::SpawnReturn(i) => {
                let w = self.worker_of[i];
                let mut unit = self.units[i].take().expect("unit is in the slab");
                let rec = &mut self.rec.executors[w];
                rec.record(EventName::SpawnReturn, now, Some(unit.id()));
                unit.exit_code = Some(0);
                unit.transition(UnitState::Done, now, rec)?;
                self.terminal += 1;
                self.sched.release(unit);
                self.scheduler_step(now)?;
            }
            Ev::Walltime => unreachable!("handled by the main loop"),
        }
        Ok(())
    }

    fn finish_step(&mut self, start: Seconds, now: Seconds, step: Step) -> Result<(), RuntimeError> {
        let rec = &mut self.rec.scheduler;
        match step {
            Step::Unscheduled { unit, .. } => {
                rec.record(EventName::UnschedDone, now, Some(unit.id()));
                self.put(unit);
            }
            Step::Scheduled { mut unit, .. } => {
                rec.record(EventName::SchedStart, start, Some(unit.id()));
                rec.record(EventName::SchedDone, now, Some(unit.id()));
                unit.transition(UnitState::Scheduled, now, rec)?;
                unit.transition(UnitState::PendingExecution, now, rec)?;
                rec.record(EventName::ExecQueued, now, Some(unit.id()));
                let i = self.put(unit);
                self.exec_queue.push_back(i);
                self.dispatch(now);
            }
            Step::Rejected { mut unit, .. } => {
                unit.transition(UnitState::Failed, now, rec)?;
                self.terminal += 1;
                self.put(unit);
            }
            Step::NoFit { .. } | Step::Idle => {}
        }
        Ok(())
    }

    fn dispatch(&mut self, now: Seconds) {
        while !self.exec_queue.is_empty() {
            let Some(w) = self.free_workers.pop_front() else {
                return;
            };
            let i = self.exec_queue.pop_front().expect("queue is not empty");
            self.worker_of[i] = w;
            let id = self.unit(i).desc.id.clone();
            self.rec.executors[w].record(EventName::ExecStart, now, Some(&id));
            if self.service > 0.0 {
                self.push(now + self.service, Ev::ExecutorFree(w));
            } else {
                self.free_workers.push_back(w);
            }
            self.push(now + self.service + self.prepare[i], Ev::PayloadStart(i));
        }
    }

    /// Cancels every unit that has not reached a terminal state.
    fn abort(&mut self, now: Seconds) -> Result<(), RuntimeError> {
        let mut back: Vec<ComputeUnit> = self.sched.drain_pending();
        back.extend(self.sched.drain_releases());
        if let Some((_, step)) = self.inflight.take() {
            match step {
                Step::Unscheduled { unit, .. } | Step::Scheduled { unit, .. } | Step::Rejected { unit, .. } => {
                    back.push(unit)
                }
                Step::NoFit { .. } | Step::Idle => {}
            }
        }
        for unit in back {
            self.put(unit);
        }
        for slot in self.units.iter_mut() {
            let unit = slot.as_mut().expect("every unit is back in the slab");
            if !unit.state.is_terminal() {
                unit.transition(UnitState::Canceled, now, &mut self.rec.agent)?;
            }
        }
        Ok(())
    }
}
