//! Wait-for-graph deadlock oracle.
//!
//! An AV waits for another when it has been stationary for the whole
//! detection window and its intended path collides, in space and time, with
//! the other's intended path. A directed cycle of such edges is a deadlock.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::heading_diff;
use crate::prediction::{last_moving_index, pre_stop_intent, IntentConfig, KalmanParams, PredictedTrajectory, PredictionError};
use crate::road_network::{LaneGraph, LaneId};
use crate::scenario::{AgentId, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Speed below which an AV counts as stopped, m/s.
    pub eps_v: f64,
    /// Detection window, seconds.
    pub delta_t: f64,
    /// Spatial tolerance of the intent conflict test, meters.
    pub d_eps: f64,
    /// Temporal tolerance of the intent conflict test, seconds.
    pub tau_eps: f64,
    /// Prediction horizon, seconds.
    pub horizon: f64,
    /// Spacing of the timestamps at which graphs are built, seconds.
    pub scan_stride: f64,
    pub v_move: f64,
    pub kalman: KalmanParams<f64>,
    /// Intents anchored on connected lanes closer than this in heading are
    /// car following, not waiting. Degrees.
    pub same_lane_heading_deg: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eps_v: 0.01,
            delta_t: 5.0,
            d_eps: 2.5,
            tau_eps: 2.0,
            horizon: 5.0,
            scan_stride: 1.0,
            v_move: 1.0,
            kalman: KalmanParams::default(),
            same_lane_heading_deg: 30.0,
        }
    }
}

impl OracleConfig {
    pub fn intent(&self) -> IntentConfig {
        IntentConfig { window: self.delta_t, horizon: self.horizon, v_move: self.v_move, kalman: self.kalman }
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("eps_v", self.eps_v),
            ("delta_t", self.delta_t),
            ("d_eps", self.d_eps),
            ("tau_eps", self.tau_eps),
            ("horizon", self.horizon),
            ("scan_stride", self.scan_stride),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("oracle {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Waitfor,
    NaiveTimer,
}

impl FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "waitfor" => Ok(OracleMode::Waitfor),
            "naive_timer" => Ok(OracleMode::NaiveTimer),
            other => Err(format!("unknown oracle {other:?} (expected waitfor or naive_timer)")),
        }
    }
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMode::Waitfor => "waitfor",
            OracleMode::NaiveTimer => "naive_timer",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("agent {0} is not present in the observation")]
    UnknownAgent(AgentId),
    #[error("window ending at t = {0} s is not covered by the observation")]
    WindowOutOfRange(f64),
    #[error("observation ended in a collision")]
    CollidedObservation,
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WaitForGraph {
    pub t: f64,
    pub vertices: BTreeSet<AgentId>,
    pub edges: BTreeSet<(AgentId, AgentId)>,
}

impl WaitForGraph {
    pub fn successors(&self, v: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges.range((v, AgentId(0))..=(v, AgentId(u32::MAX))).map(|&(_, j)| j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub outcome: Outcome,
    pub cycle: Option<Vec<AgentId>>,
    pub t_detect: Option<f64>,
    pub graphs: Vec<WaitForGraph>,
}

impl OracleVerdict {
    pub fn is_fail(&self) -> bool {
        self.outcome == Outcome::Fail
    }
}

fn window_indices(obs: &Observation, t: f64, cfg: &OracleConfig) -> Result<(usize, usize), OracleError> {
    let lo = ((t - cfg.delta_t) / obs.dt - 1e-6).ceil();
    let hi = (t / obs.dt + 1e-6).floor();
    if lo < 0.0 || hi as usize >= obs.scenes.len() {
        return Err(OracleError::WindowOutOfRange(t));
    }
    Ok((lo as usize, hi as usize))
}

/// True when `av` stayed strictly below `eps_v` over `[t - delta_t, t]`.
pub fn phi_stop(obs: &Observation, av: AgentId, t: f64, cfg: &OracleConfig) -> Result<bool, OracleError> {
    if !obs.contains(av) {
        return Err(OracleError::UnknownAgent(av));
    }
    let (lo, hi) = window_indices(obs, t, cfg)?;
    Ok((lo..=hi).all(|i| obs.state(i, av).is_some_and(|s| s.v < cfg.eps_v)))
}

/// True when some pair of samples is within `tau_eps` in time and `d_eps`
/// in space.
pub fn trajectories_conflict(a: &PredictedTrajectory<f64>, b: &PredictedTrajectory<f64>, cfg: &OracleConfig) -> bool {
    let d2 = cfg.d_eps * cfg.d_eps;
    a.samples.iter().any(|(ta, pa)| {
        b.samples
            .iter()
            .any(|(tb, pb)| (ta - tb).abs() <= cfg.tau_eps + 1e-9 && pa.distance_sq(*pb) <= d2)
    })
}

/// Predicted intent plus where it was anchored.
#[derive(Clone, Debug)]
struct Intent {
    trajectory: PredictedTrajectory<f64>,
    lane: Option<LaneId>,
    heading: f64,
}

fn intent_at(obs: &Observation, graph: &LaneGraph, av: AgentId, t: f64, cfg: &OracleConfig) -> Result<Intent, OracleError> {
    let icfg = cfg.intent();
    let trajectory = pre_stop_intent(obs, av, t, &icfg)?;
    let idx = last_moving_index(obs, av, t, &icfg)?.unwrap_or_else(|| obs.scene_index(t));
    let st = obs.state(idx, av).ok_or(OracleError::UnknownAgent(av))?;
    let lane = graph.nearest_lane(st.p, Some(st.theta)).map(|h| h.lane);
    Ok(Intent { trajectory, lane, heading: st.theta })
}

fn same_lane(graph: &LaneGraph, a: &Intent, b: &Intent, cfg: &OracleConfig) -> bool {
    match (a.lane, b.lane) {
        (Some(la), Some(lb)) => {
            graph.adjacent_or_same(la, lb) && heading_diff(a.heading, b.heading) < cfg.same_lane_heading_deg.to_radians()
        }
        _ => false,
    }
}

fn edge_from_intents(graph: &LaneGraph, a: &Intent, b: &Intent, cfg: &OracleConfig) -> bool {
    !same_lane(graph, a, b, cfg) && trajectories_conflict(&a.trajectory, &b.trajectory, cfg)
}

/// Whether AV `i` is waiting for AV `j` at time `t`.
pub fn wait_for_edge(
    obs: &Observation,
    graph: &LaneGraph,
    i: AgentId,
    j: AgentId,
    t: f64,
    cfg: &OracleConfig,
) -> Result<bool, OracleError> {
    if i == j || !phi_stop(obs, i, t, cfg)? {
        return Ok(false);
    }
    let a = intent_at(obs, graph, i, t, cfg)?;
    let b = intent_at(obs, graph, j, t, cfg)?;
    Ok(edge_from_intents(graph, &a, &b, cfg))
}

fn arrived(obs: &Observation, av: AgentId, index: usize) -> bool {
    match (obs.info(av).and_then(|i| i.p_dest), obs.state(index, av)) {
        (Some(dest), Some(st)) => st.p.distance(dest) <= 1.0,
        _ => false,
    }
}

/// AVs that could have been waiting for the whole window ending at `t`:
/// triggered before it began and not yet at their destination.
fn candidate_avs(obs: &Observation, t: f64, cfg: &OracleConfig) -> BTreeSet<AgentId> {
    let idx = obs.scene_index(t);
    obs.agents
        .iter()
        .filter(|a| a.kind == crate::scenario::AgentKind::Av)
        .filter(|a| a.t_trigger <= t - cfg.delta_t + 1e-9)
        .filter(|a| !arrived(obs, a.id, idx))
        .map(|a| a.id)
        .collect()
}

pub fn build_wait_for_graph(
    obs: &Observation,
    graph: &LaneGraph,
    t: f64,
    cfg: &OracleConfig,
) -> Result<WaitForGraph, OracleError> {
    let vertices = candidate_avs(obs, t, cfg);
    let mut stopped = BTreeSet::new();
    for &v in &vertices {
        if phi_stop(obs, v, t, cfg)? {
            stopped.insert(v);
        }
    }
    let mut edges = BTreeSet::new();
    if !stopped.is_empty() && vertices.len() >= 2 {
        let mut intents = BTreeMap::new();
        for &v in &vertices {
            intents.insert(v, intent_at(obs, graph, v, t, cfg)?);
        }
        for &i in &stopped {
            for &j in &vertices {
                if i != j && edge_from_intents(graph, &intents[&i], &intents[&j], cfg) {
                    edges.insert((i, j));
                }
            }
        }
    }
    Ok(WaitForGraph { t, vertices, edges })
}

/// A directed cycle, if any. Among all simple cycles the one whose sorted
/// vertex list is lexicographically smallest is returned, starting at its
/// smallest vertex; ties between orderings of the same set go to the
/// lexicographically smallest sequence.
pub fn detect_cycle(g: &WaitForGraph) -> Option<Vec<AgentId>> {
    let mut best: Option<(Vec<AgentId>, Vec<AgentId>)> = None;
    let nodes: BTreeSet<AgentId> = g.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    for &start in &nodes {
        let mut path = vec![start];
        search(g, start, &mut path, &mut best);
    }
    best.map(|(_, cycle)| cycle)
}

fn search(g: &WaitForGraph, start: AgentId, path: &mut Vec<AgentId>, best: &mut Option<(Vec<AgentId>, Vec<AgentId>)>) {
    let last = *path.last().expect("path starts non-empty");
    for next in g.successors(last) {
        if next == start && path.len() >= 2 {
            let mut key = path.clone();
            key.sort();
            let better = match best {
                None => true,
                Some((k, c)) => (&key, &*path) < (k, c),
            };
            if better {
                *best = Some((key, path.clone()));
            }
        } else if next > start && !path.contains(&next) {
            path.push(next);
            search(g, start, path, best);
            path.pop();
        }
    }
}

fn scan_times(obs: &Observation, cfg: &OracleConfig) -> Vec<f64> {
    let end = obs.end_time();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = cfg.delta_t + k as f64 * cfg.scan_stride;
        if t > end + 1e-9 {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

/// Scans the run and reports the earliest wait-for cycle.
pub fn evaluate(obs: &Observation, graph: &LaneGraph, cfg: &OracleConfig) -> Result<OracleVerdict, OracleError> {
    if obs.collision_flag {
        return Err(OracleError::CollidedObservation);
    }
    let mut graphs = Vec::new();
    for t in scan_times(obs, cfg) {
        let g = build_wait_for_graph(obs, graph, t, cfg)?;
        if g.edges.is_empty() {
            continue;
        }
        let cycle = detect_cycle(&g);
        graphs.push(g);
        if let Some(cycle) = cycle {
            return Ok(OracleVerdict { outcome: Outcome::Fail, cycle: Some(cycle), t_detect: Some(t), graphs });
        }
    }
    Ok(OracleVerdict { outcome: Outcome::Pass, cycle: None, t_detect: None, graphs })
}

/// Baseline: fails as soon as two or more AVs are stationary over the same
/// window, without looking at why.
pub fn naive_timer(obs: &Observation, cfg: &OracleConfig) -> Result<OracleVerdict, OracleError> {
    if obs.collision_flag {
        return Err(OracleError::CollidedObservation);
    }
    for t in scan_times(obs, cfg) {
        let mut stuck = Vec::new();
        for v in candidate_avs(obs, t, cfg) {
            if phi_stop(obs, v, t, cfg)? {
                stuck.push(v);
            }
        }
        if stuck.len() >= 2 {
            let edges = stuck
                .iter()
                .flat_map(|&a| stuck.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
                .collect();
            let g = WaitForGraph { t, vertices: stuck.iter().copied().collect(), edges };
            return Ok(OracleVerdict { outcome: Outcome::Fail, cycle: Some(stuck), t_detect: Some(t), graphs: vec![g] });
        }
    }
    Ok(OracleVerdict { outcome: Outcome::Pass, cycle: None, t_detect: None, graphs: vec![] })
}

pub fn judge(obs: &Observation, graph: &LaneGraph, mode: OracleMode, cfg: &OracleConfig) -> Result<OracleVerdict, OracleError> {
    match mode {
        OracleMode::Waitfor => evaluate(obs, graph, cfg),
        OracleMode::NaiveTimer => naive_timer(obs, cfg),
    }
}
