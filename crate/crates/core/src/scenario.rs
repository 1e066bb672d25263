//! Scenario and observation data model, validation and JSON encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road_network::{LaneGraph, MapId, ON_LANE_TOLERANCE};
use crate::Point;

/// Minimum distance between any two agents' starting positions.
pub const MIN_SPAWN_SEPARATION: f64 = 5.0;
/// Upper bound on any expected or commanded speed, m/s.
pub const MAX_SPEED: f64 = 30.0;
/// Default maximum number of AVs per scenario.
pub const DEFAULT_MAX_AVS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An autonomous vehicle driven by the policy under test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvSpec {
    pub id: AgentId,
    pub p_start: Point,
    pub p_dest: Point,
    /// Time at which the vehicle starts moving, seconds.
    pub t_trigger: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub p: Point,
    pub theta: f64,
    /// Expected speed at this waypoint, m/s.
    pub v: f64,
}

/// An open-loop waypoint-following vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpcSpec {
    pub id: AgentId,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub map_id: MapId,
    pub rng_seed: u64,
    pub avs: Vec<AvSpec>,
    pub npcs: Vec<NpcSpec>,
}

impl Scenario {
    pub fn agent_ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.avs.iter().map(|a| a.id).chain(self.npcs.iter().map(|n| n.id))
    }

    /// Smallest id not used by any agent.
    pub fn next_agent_id(&self) -> AgentId {
        AgentId(self.agent_ids().map(|a| a.0 + 1).max().unwrap_or(1))
    }

    pub fn av(&self, id: AgentId) -> Option<&AvSpec> {
        self.avs.iter().find(|a| a.id == id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub p: Point,
    pub theta: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Av,
    Npc,
}

/// Roster entry carried by an observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: AgentId,
    pub kind: AgentKind,
    /// Trigger time for AVs; 0 for NPCs.
    pub t_trigger: f64,
    /// Planned destination of an AV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dest: Option<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub t: f64,
    pub agents: BTreeMap<AgentId, AgentState>,
}

/// Time-ordered record of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub map_id: MapId,
    pub dt: f64,
    pub agents: Vec<AgentInfo>,
    pub scenes: Vec<Scene>,
    pub collision_flag: bool,
    pub collided_pair: Option<(AgentId, AgentId)>,
}

impl Observation {
    pub fn av_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.agents.iter().filter(|a| a.kind == AgentKind::Av).map(|a| a.id).collect();
        ids.sort();
        ids
    }

    pub fn info(&self, id: AgentId) -> Option<&AgentInfo> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.scenes.first().is_some_and(|s| s.agents.contains_key(&id))
    }

    /// Time of the last scene.
    pub fn end_time(&self) -> f64 {
        self.scenes.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Index of the scene nearest to time `t`, clamped to the recording.
    pub fn scene_index(&self, t: f64) -> usize {
        if self.scenes.is_empty() {
            return 0;
        }
        let i = (t / self.dt).round().max(0.0) as usize;
        i.min(self.scenes.len() - 1)
    }

    pub fn state(&self, index: usize, id: AgentId) -> Option<&AgentState> {
        self.scenes.get(index).and_then(|s| s.agents.get(&id))
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(to_json(self).as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewAvs { count: usize },
    TooManyAvs { count: usize, max: usize },
    DuplicateId { id: AgentId },
    SpawnOverlap { a: AgentId, b: AgentId, distance: f64 },
    NegativeTrigger { id: AgentId },
    StartEqualsDest { id: AgentId },
    StartNotAtSpawn { id: AgentId },
    TooFewWaypoints { id: AgentId },
    SpeedOutOfRange { id: AgentId, index: usize },
    NonFinite { id: AgentId },
    MapMismatch { scenario: MapId, graph: MapId },
}

fn finite(p: Point) -> bool {
    p.x.is_finite() && p.y.is_finite()
}

/// Lists every invariant the scenario breaks on `graph`; empty means valid.
pub fn validate(scenario: &Scenario, graph: &LaneGraph, max_avs: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if scenario.map_id != graph.map_id() {
        out.push(Violation::MapMismatch { scenario: scenario.map_id, graph: graph.map_id() });
    }
    let n = scenario.avs.len();
    if n < 2 {
        out.push(Violation::TooFewAvs { count: n });
    }
    if n > max_avs {
        out.push(Violation::TooManyAvs { count: n, max: max_avs });
    }
    let mut seen = BTreeSet::new();
    for id in scenario.agent_ids() {
        if !seen.insert(id) {
            out.push(Violation::DuplicateId { id });
        }
    }
    let mut starts: Vec<(AgentId, Point)> = Vec::new();
    for av in &scenario.avs {
        if !(finite(av.p_start) && finite(av.p_dest) && av.t_trigger.is_finite()) {
            out.push(Violation::NonFinite { id: av.id });
            continue;
        }
        if av.t_trigger < 0.0 {
            out.push(Violation::NegativeTrigger { id: av.id });
        }
        if av.p_start == av.p_dest {
            out.push(Violation::StartEqualsDest { id: av.id });
        }
        let near_spawn = graph.spawn_points().iter().any(|s| s.position.distance(av.p_start) <= ON_LANE_TOLERANCE);
        if !near_spawn {
            out.push(Violation::StartNotAtSpawn { id: av.id });
        }
        starts.push((av.id, av.p_start));
    }
    for npc in &scenario.npcs {
        if npc.waypoints.len() < 2 {
            out.push(Violation::TooFewWaypoints { id: npc.id });
        }
        if npc.waypoints.iter().any(|w| !(finite(w.p) && w.theta.is_finite() && w.v.is_finite())) {
            out.push(Violation::NonFinite { id: npc.id });
            continue;
        }
        for (index, w) in npc.waypoints.iter().enumerate() {
            if !(0.0..=MAX_SPEED).contains(&w.v) {
                out.push(Violation::SpeedOutOfRange { id: npc.id, index });
            }
        }
        if let Some(w) = npc.waypoints.first() {
            starts.push((npc.id, w.p));
        }
    }
    for i in 0..starts.len() {
        for j in i + 1..starts.len() {
            let d = starts[i].1.distance(starts[j].1);
            if d < MIN_SPAWN_SEPARATION {
                out.push(Violation::SpawnOverlap { a: starts[i].0, b: starts[j].0, distance: d });
            }
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("agent {0} is not present in the observation")]
    UnknownAgent(AgentId),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

/// One sample of an executed trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub p: Point,
    pub v: f64,
}

/// Executed path of one agent with stationary stretches collapsed to their
/// first sample.
pub fn av_trajectory(obs: &Observation, id: AgentId) -> Result<Vec<TrajectorySample>, ScenarioError> {
    if !obs.contains(id) {
        return Err(ScenarioError::UnknownAgent(id));
    }
    let mut out: Vec<TrajectorySample> = Vec::new();
    for scene in &obs.scenes {
        let st = scene.agents.get(&id).ok_or(ScenarioError::UnknownAgent(id))?;
        if out.last().is_some_and(|last| last.p.distance(st.p) <= 1e-9) {
            continue;
        }
        out.push(TrajectorySample { t: scene.t, p: st.p, v: st.v });
    }
    Ok(out)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("model types serialize")
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("model types serialize")
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}
