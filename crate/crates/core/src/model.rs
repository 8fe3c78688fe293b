//! Pilot and compute-unit abstractions, the unit lifecycle and the pilot's
//! resource model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::TaskPayload;
use crate::executor::LatencyModel;
use crate::profiler::{EventName, Recorder};
use crate::Seconds;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid description: {0}")]
    InvalidDescription(String),
    #[error("illegal transition for {unit}: {from} -> {to}")]
    IllegalTransition {
        unit: UnitId,
        from: UnitState,
        to: UnitState,
    },
    #[error("invalid identifier {0:?}: use ASCII letters, digits, '.', '_' or '-'")]
    InvalidIdentifier(String),
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

/// Identifier of a compute unit. Restricted to characters that are safe in
/// file names, environment values and delimiter-separated trace rows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UnitId(String);

impl UnitId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if valid_identifier(&id) {
            Ok(UnitId(id))
        } else {
            Err(ModelError::InvalidIdentifier(id))
        }
    }

    /// Canonical id of the `index`-th unit of a generated workload.
    pub fn indexed(index: usize) -> Self {
        UnitId(format!("unit.{index:06}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UnitId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        UnitId::new(s)
    }
}

impl From<UnitId> for String {
    fn from(id: UnitId) -> String {
        id.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Real,
    Virtual,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Backend::Real),
            "virtual" => Ok(Backend::Virtual),
            other => Err(format!("unknown backend {other:?} (expected real|virtual)")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Real => "real",
            Backend::Virtual => "virtual",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotDescription {
    pub resource: String,
    pub node_count: usize,
    pub cores_per_node: usize,
    /// Explicit node names in declaration order. Generated when empty.
    pub node_names: Vec<String>,
    pub walltime: Seconds,
    pub backend: Backend,
    pub latency: LatencyModel,
}

impl PilotDescription {
    pub fn new(node_count: usize, cores_per_node: usize) -> Self {
        PilotDescription {
            resource: "local".to_string(),
            node_count,
            cores_per_node,
            node_names: Vec::new(),
            walltime: 86_400.0,
            backend: Backend::Virtual,
            latency: LatencyModel::zero(),
        }
    }

    pub fn total_cores(&self) -> usize {
        self.node_count * self.cores_per_node
    }
}

/// Checks a pilot description and builds its resource model with every
/// core free.
pub fn validate_pilot(desc: &PilotDescription) -> Result<ResourceModel, ModelError> {
    if desc.node_count == 0 {
        return Err(ModelError::InvalidDescription("pilot has zero nodes".into()));
    }
    if desc.cores_per_node == 0 {
        return Err(ModelError::InvalidDescription(
            "pilot has zero cores per node".into(),
        ));
    }
    if desc.walltime.is_nan() || desc.walltime <= 0.0 {
        return Err(ModelError::InvalidDescription(format!(
            "walltime must be positive, got {}",
            desc.walltime
        )));
    }
    if !desc.node_names.is_empty() {
        if desc.node_names.len() != desc.node_count {
            return Err(ModelError::InvalidDescription(format!(
                "{} node names given for {} nodes",
                desc.node_names.len(),
                desc.node_count
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &desc.node_names {
            if !valid_identifier(name) {
                return Err(ModelError::InvalidIdentifier(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                return Err(ModelError::InvalidDescription(format!(
                    "duplicate node name {name:?}"
                )));
            }
        }
    }
    desc.latency
        .validate()
        .map_err(ModelError::InvalidDescription)?;
    let names = if desc.node_names.is_empty() {
        (0..desc.node_count).map(|i| format!("node{i:04}")).collect()
    } else {
        desc.node_names.clone()
    };
    Ok(ResourceModel::new(names, desc.cores_per_node))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDescription {
    pub id: UnitId,
    pub cores: usize,
    pub payload: TaskPayload,
    #[serde(default)]
    pub stage_in: Vec<std::path::PathBuf>,
    #[serde(default)]
    pub stage_out: Vec<std::path::PathBuf>,
}

impl UnitDescription {
    pub fn new(id: UnitId, cores: usize, payload: TaskPayload) -> Self {
        UnitDescription {
            id,
            cores,
            payload,
            stage_in: Vec::new(),
            stage_out: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitState {
    New,
    PendingSchedule,
    Scheduled,
    PendingExecution,
    Executing,
    Done,
    Failed,
    Canceled,
}

impl UnitState {
    pub const ALL: [UnitState; 8] = [
        UnitState::New,
        UnitState::PendingSchedule,
        UnitState::Scheduled,
        UnitState::PendingExecution,
        UnitState::Executing,
        UnitState::Done,
        UnitState::Failed,
        UnitState::Canceled,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, UnitState::Done | UnitState::Failed | UnitState::Canceled)
    }

    /// Legal moves: one step forward along the pipeline, or from any live
    /// state straight to `Failed` or `Canceled`. `Done` is reachable only
    /// from `Executing`.
    pub fn can_transition(self, to: UnitState) -> bool {
        use UnitState::*;
        match (self, to) {
            (New, PendingSchedule)
            | (PendingSchedule, Scheduled)
            | (Scheduled, PendingExecution)
            | (PendingExecution, Executing)
            | (Executing, Done) => true,
            (from, Failed | Canceled) => !from.is_terminal(),
            _ => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UnitState::New => "new",
            UnitState::PendingSchedule => "pending_schedule",
            UnitState::Scheduled => "scheduled",
            UnitState::PendingExecution => "pending_execution",
            UnitState::Executing => "executing",
            UnitState::Done => "done",
            UnitState::Failed => "failed",
            UnitState::Canceled => "canceled",
        }
    }

    pub fn parse(s: &str) -> Option<UnitState> {
        UnitState::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for UnitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One core on one node, addressed by the node's position in the
/// resource model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub node: usize,
    pub core: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub unit: UnitId,
    pub slots: Vec<Slot>,
    /// Block index when the allocation came from a block free list.
    pub block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: String,
    /// `true` = busy.
    pub cores: Vec<bool>,
    pub free: usize,
}

/// Per-core occupancy of the pilot's nodes, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceModel {
    nodes: Vec<NodeRecord>,
    cores_per_node: usize,
    free: usize,
}

impl ResourceModel {
    pub fn new(node_names: Vec<String>, cores_per_node: usize) -> Self {
        let nodes: Vec<NodeRecord> = node_names
            .into_iter()
            .map(|id| NodeRecord {
                id,
                cores: vec![false; cores_per_node],
                free: cores_per_node,
            })
            .collect();
        let free = nodes.len() * cores_per_node;
        ResourceModel {
            nodes,
            cores_per_node,
            free,
        }
    }

    /// Model with generated node names, for tests and synthetic pilots.
    pub fn uniform(node_count: usize, cores_per_node: usize) -> Self {
        Self::new(
            (0..node_count).map(|i| format!("node{i:04}")).collect(),
            cores_per_node,
        )
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn cores_per_node(&self) -> usize {
        self.cores_per_node
    }

    pub fn total_cores(&self) -> usize {
        self.nodes.len() * self.cores_per_node
    }

    pub fn free_cores(&self) -> usize {
        self.free
    }

    pub fn busy_cores(&self) -> usize {
        self.total_cores() - self.free
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    pub fn is_busy(&self, slot: Slot) -> bool {
        self.nodes[slot.node].cores[slot.core]
    }

    pub(crate) fn core_busy(&self, node: usize, core: usize) -> bool {
        self.nodes[node].cores[core]
    }

    /// Marks the slots busy. All slots must currently be free.
    pub(crate) fn occupy(&mut self, slots: &[Slot]) {
        for s in slots {
            let node = &mut self.nodes[s.node];
            debug_assert!(!node.cores[s.core], "slot {s:?} already busy");
            node.cores[s.core] = true;
            node.free -= 1;
        }
        self.free -= slots.len();
    }

    /// Marks the slots free. Returns false, leaving the model unchanged,
    /// if any slot is already free.
    pub(crate) fn release(&mut self, slots: &[Slot]) -> bool {
        if slots.iter().any(|s| !self.is_busy(*s)) {
            return false;
        }
        for s in slots {
            let node = &mut self.nodes[s.node];
            node.cores[s.core] = false;
            node.free += 1;
        }
        self.free += slots.len();
        true
    }

    pub fn free_slots(&self) -> BTreeSet<Slot> {
        let mut set = BTreeSet::new();
        for (n, node) in self.nodes.iter().enumerate() {
            for (c, busy) in node.cores.iter().enumerate() {
                if !busy {
                    set.insert(Slot { node: n, core: c });
                }
            }
        }
        set
    }

    /// `NODE:CORE,...` rendering of a slot list using node names.
    pub fn render_slots(&self, slots: &[Slot]) -> String {
        slots
            .iter()
            .map(|s| format!("{}:{}", self.nodes[s.node].id, s.core))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A unit description plus its mutable lifecycle record.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeUnit {
    pub desc: UnitDescription,
    pub state: UnitState,
    pub allocation: Option<Allocation>,
    /// `(state, time)` for every state entered, starting with `New`.
    pub history: Vec<(UnitState, Seconds)>,
    pub exit_code: Option<i32>,
    /// Payload duration drawn for this unit.
    pub duration: Seconds,
}

impl ComputeUnit {
    pub fn new(desc: UnitDescription, duration: Seconds, now: Seconds) -> Self {
        ComputeUnit {
            desc,
            state: UnitState::New,
            allocation: None,
            history: vec![(UnitState::New, now)],
            exit_code: None,
            duration,
        }
    }

    pub fn id(&self) -> &UnitId {
        &self.desc.id
    }

    /// Moves the unit to `to`, recording a state event on `recorder`.
    pub fn transition(
        &mut self,
        to: UnitState,
        now: Seconds,
        recorder: &mut Recorder,
    ) -> Result<(), ModelError> {
        if !self.state.can_transition(to) {
            return Err(ModelError::IllegalTransition {
                unit: self.desc.id.clone(),
                from: self.state,
                to,
            });
        }
        debug_assert!(
            self.history.last().is_none_or(|&(_, last)| now >= last),
            "time went backwards for {}",
            self.desc.id
        );
        self.state = to;
        self.history.push((to, now));
        recorder.record(EventName::State(to), now, Some(&self.desc.id));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::TaskPayload;

    fn unit() -> ComputeUnit {
        let desc = UnitDescription::new(UnitId::indexed(0), 4, TaskPayload::sleep(1.0, 0.0));
        ComputeUnit::new(desc, 1.0, 0.0)
    }

    #[test]
    fn validate_small_pilot() {
        let model = validate_pilot(&PilotDescription::new(2, 16)).unwrap();
        assert_eq!(model.total_cores(), 32);
        assert_eq!(model.free_cores(), 32);
        assert_eq!(model.free_slots().len(), 32);
    }

    #[test]
    fn validate_largest_weak_pilot() {
        let model = validate_pilot(&PilotDescription::new(8192, 16)).unwrap();
        assert_eq!(model.total_cores(), 131_072);
    }

    #[test]
    fn validate_rejects_degenerate() {
        assert!(matches!(
            validate_pilot(&PilotDescription::new(0, 16)),
            Err(ModelError::InvalidDescription(_))
        ));
        assert!(matches!(
            validate_pilot(&PilotDescription::new(4, 0)),
            Err(ModelError::InvalidDescription(_))
        ));
        let mut d = PilotDescription::new(1, 1);
        d.walltime = 0.0;
        assert!(matches!(validate_pilot(&d), Err(ModelError::InvalidDescription(_))));
        d.walltime = f64::NAN;
        assert!(validate_pilot(&d).is_err());
    }

    #[test]
    fn node_names_follow_declaration_order() {
        let mut d = PilotDescription::new(2, 4);
        d.node_names = vec!["zeta".into(), "alpha".into()];
        let model = validate_pilot(&d).unwrap();
        assert_eq!(model.node_name(0), "zeta");
        d.node_names = vec!["a".into(), "a".into()];
        assert!(validate_pilot(&d).is_err());
    }

    #[test]
    fn lifecycle_forward_path() {
        let mut rec = Recorder::disabled();
        let mut u = unit();
        for (i, s) in [
            UnitState::PendingSchedule,
            UnitState::Scheduled,
            UnitState::PendingExecution,
            UnitState::Executing,
            UnitState::Done,
        ]
        .into_iter()
        .enumerate()
        {
            u.transition(s, i as f64, &mut rec).unwrap();
        }
        assert_eq!(u.state, UnitState::Done);
        assert_eq!(u.history.len(), 6);
    }

    #[test]
    fn transition_emits_state_event() {
        let mut rec = Recorder::in_memory("agent", 0);
        let mut u = unit();
        u.transition(UnitState::PendingSchedule, 1.5, &mut rec).unwrap();
        let events = rec.events();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].name, EventName::State(UnitState::PendingSchedule));
        assert_eq!(events[0].time, 1.5);
    }

    #[test]
    fn done_to_executing_is_illegal() {
        let mut rec = Recorder::disabled();
        let mut u = unit();
        u.state = UnitState::Done;
        let err = u.transition(UnitState::Executing, 5.0, &mut rec).unwrap_err();
        assert!(matches!(err, ModelError::IllegalTransition { .. }));
        assert_eq!(u.state, UnitState::Done);
    }

    #[test]
    fn terminal_states_are_absorbing() {
        for from in [UnitState::Done, UnitState::Failed, UnitState::Canceled] {
            for to in UnitState::ALL {
                assert!(!from.can_transition(to), "{from} -> {to}");
            }
        }
        assert!(UnitState::PendingSchedule.can_transition(UnitState::Canceled));
        assert!(!UnitState::Scheduled.can_transition(UnitState::Done));
        assert!(!UnitState::Executing.can_transition(UnitState::Scheduled));
    }

    #[test]
    fn unit_ids_are_restricted() {
        assert!(UnitId::new("unit.000001").is_ok());
        assert!(UnitId::new("a,b").is_err());
        assert!(UnitId::new("").is_err());
        assert!(UnitId::new("has space").is_err());
    }

    #[test]
    fn release_rejects_free_slot() {
        let mut m = ResourceModel::uniform(1, 2);
        let s = [Slot { node: 0, core: 1 }];
        assert!(!m.release(&s));
        m.occupy(&s);
        assert_eq!(m.free_cores(), 1);
        assert!(m.release(&s));
        assert_eq!(m, ResourceModel::uniform(1, 2));
    }
}
