//! Deterministic fixed-step traffic simulation.
//!
//! AVs follow planned routes under a [`Policy`]; NPCs track their waypoints
//! open loop. Every step, decisions are made from the previous step's
//! snapshot and applied in ascending agent-id order.

pub mod conflicts;
pub mod policy;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{heading_diff, project_onto};
use crate::road_network::{plan_route, LaneGraph, Route, RouteError};
use crate::scenario::{
    validate, AgentId, AgentInfo, AgentKind, AgentState, Observation, Scenario, Scene, Violation,
};
use crate::Point;

pub use conflicts::{path_conflicts, ConflictKind, LabeledPath, PathConflict};
pub use policy::{
    ConflictView, ConservativeYield, LeaderView, OtherAgent, Policy, PolicyCommand, PolicyKind, PolicyView,
    PriorityTiebreak, YieldParams, MAX_ACCEL, MAX_BRAKE, VEHICLE_LENGTH,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step length, seconds.
    pub dt: f64,
    pub horizon: f64,
    pub collision_distance: f64,
    /// Stop early once every agent has been still this long.
    pub stationary_timeout: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.1, horizon: 90.0, collision_distance: 2.0, stationary_timeout: 20.0 }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return Err(SimError::InvalidConfig(format!("dt must lie in (0, 0.5], got {}", self.dt)));
        }
        if !(self.horizon >= 10.0) {
            return Err(SimError::InvalidConfig(format!("horizon must be at least 10 s, got {}", self.horizon)));
        }
        if !(self.collision_distance > 0.0 && self.stationary_timeout > 0.0) {
            return Err(SimError::InvalidConfig("collision_distance and stationary_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0:?}")]
    InvalidScenario(Vec<Violation>),
    #[error("AV {agent} cannot be routed: {source}")]
    NoRoute { agent: AgentId, source: RouteError },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Speeds below this count as standing still.
const STILL: f64 = 0.01;
/// Comfortable deceleration used for the speed look-ahead.
const LOOKAHEAD_BRAKE: f64 = 2.0;
const NPC_GAIN: f64 = 1.5;
const NPC_MIN_SPEED: f64 = 1.0;
/// Lateral tolerance for treating an agent as being on our route.
const LEADER_LATERAL: f64 = 2.0;
const LEADER_RANGE: f64 = 60.0;
/// Past the first stop line by more than this counts as inside the junction.
const ENTRY_TOL: f64 = 0.5;

/// Lowest-id pair of agents closer than `collision_distance`.
pub fn detect_collision(scene: &Scene, collision_distance: f64) -> Option<(AgentId, AgentId)> {
    let agents: Vec<(&AgentId, &AgentState)> = scene.agents.iter().collect();
    first_close_pair(&agents, collision_distance)
}

fn first_close_pair(agents: &[(&AgentId, &AgentState)], dist: f64) -> Option<(AgentId, AgentId)> {
    for (i, (a, sa)) in agents.iter().enumerate() {
        for (b, sb) in &agents[i + 1..] {
            if sa.p.distance(sb.p) < dist {
                return Some((**a, **b));
            }
        }
    }
    None
}

enum Control {
    Av { route: Route, vcap: Vec<f64>, t_trigger: f64 },
    Npc { wp_arcs: Vec<f64>, wp_speeds: Vec<f64>, factor: f64 },
}

struct Agent {
    id: AgentId,
    kind: AgentKind,
    path: LabeledPath,
    control: Control,
    s: f64,
    v: f64,
    a: f64,
    finished: bool,
}

impl Agent {
    fn state(&self) -> AgentState {
        let (p, theta) = self.path.sample(self.s);
        AgentState { p, theta, v: self.v, a: self.a }
    }

    fn triggered(&self, t: f64) -> bool {
        match &self.control {
            Control::Av { t_trigger, .. } => t >= *t_trigger - 1e-9,
            Control::Npc { .. } => true,
        }
    }

    /// Takes part in conflicts: moving or able to move, and not done.
    fn interacting(&self, t: f64) -> bool {
        !self.finished && self.triggered(t)
    }
}

/// Speed cap at every route point, honoring slower lanes ahead.
fn speed_caps(graph: &LaneGraph, route: &Route, cum: &[f64]) -> Vec<f64> {
    let limits: Vec<f64> = route
        .point_lanes
        .iter()
        .map(|l| graph.lane(*l).map(|l| l.speed_limit).unwrap_or(f64::INFINITY))
        .collect();
    let mut caps = limits;
    for i in (0..caps.len().saturating_sub(1)).rev() {
        let reach = (caps[i + 1].powi(2) + 2.0 * LOOKAHEAD_BRAKE * (cum[i + 1] - cum[i])).sqrt();
        caps[i] = caps[i].min(reach);
    }
    caps
}

fn cap_at(caps: &[f64], cum: &[f64], s: f64) -> f64 {
    let idx = cum.partition_point(|&c| c <= s).min(caps.len() - 1);
    caps[idx].min(caps[idx.saturating_sub(1)])
}

fn npc_speed_factor(seed: u64, id: AgentId) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(id.0) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.gen_range(0.95..=1.05)
}

fn build_agents(scenario: &Scenario, graph: &LaneGraph) -> Result<Vec<Agent>, SimError> {
    let mut agents = Vec::new();
    for av in &scenario.avs {
        let route = plan_route(graph, av.p_start, av.p_dest)
            .map_err(|source| SimError::NoRoute { agent: av.id, source })?;
        let path = LabeledPath::from_route(&route);
        let vcap = speed_caps(graph, &route, &path.cum);
        let finished = route.total_length <= 0.0;
        agents.push(Agent {
            id: av.id,
            kind: AgentKind::Av,
            path,
            control: Control::Av { route, vcap, t_trigger: av.t_trigger },
            s: 0.0,
            v: 0.0,
            a: 0.0,
            finished,
        });
    }
    for npc in &scenario.npcs {
        let mut pts: Vec<Point> = Vec::new();
        let mut speeds = Vec::new();
        for w in &npc.waypoints {
            if pts.last().is_none_or(|q| q.distance(w.p) > 1e-9) {
                pts.push(w.p);
                speeds.push(w.v);
            }
        }
        let path = LabeledPath::from_polyline(pts, graph);
        let finished = path.points.len() < 2;
        agents.push(Agent {
            id: npc.id,
            kind: AgentKind::Npc,
            control: Control::Npc {
                wp_arcs: path.cum.clone(),
                wp_speeds: speeds,
                factor: npc_speed_factor(scenario.rng_seed, npc.id),
            },
            path,
            s: 0.0,
            v: 0.0,
            a: 0.0,
            finished,
        });
    }
    agents.sort_by_key(|a| a.id);
    Ok(agents)
}

fn npc_accel(agent: &Agent, wp_arcs: &[f64], wp_speeds: &[f64], factor: f64) -> f64 {
    let k = wp_arcs.partition_point(|&c| c <= agent.s + 1e-9).min(wp_arcs.len() - 1);
    let last = k + 1 == wp_arcs.len();
    let mut target = wp_speeds[k] * factor;
    if !last {
        target = target.max(NPC_MIN_SPEED);
    } else {
        let to_end = (agent.path.length() - agent.s).max(0.0);
        target = target.max((2.0 * LOOKAHEAD_BRAKE * to_end).sqrt().min(NPC_MIN_SPEED));
    }
    (NPC_GAIN * (target - agent.v)).clamp(-MAX_BRAKE, MAX_ACCEL)
}

fn find_leader(me: &Agent, snapshot: &[AgentState], agents: &[Agent]) -> Option<LeaderView> {
    let pts = &me.path.points;
    let cum = &me.path.cum;
    let lo = cum.partition_point(|&c| c <= me.s).saturating_sub(1);
    let hi = cum.partition_point(|&c| c <= me.s + LEADER_RANGE + 1.0).min(pts.len());
    if hi <= lo + 1 {
        return None;
    }
    let my_p = me.path.sample(me.s).0;
    let mut best: Option<LeaderView> = None;
    for (other, st) in agents.iter().zip(snapshot) {
        if other.id == me.id || other.finished || st.p.distance(my_p) > LEADER_RANGE + 5.0 {
            continue;
        }
        let Some(pr) = project_onto(&pts[lo..hi], &cum[lo..hi], st.p) else { continue };
        if pr.distance > LEADER_LATERAL || pr.arc <= me.s || heading_diff(pr.heading, st.theta) > 45f64.to_radians() {
            continue;
        }
        // A stationary vehicle's heading is still meaningful: it comes from its path.
        let gap = pr.arc - me.s - VEHICLE_LENGTH;
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(LeaderView { id: other.id, gap, v: st.v });
        }
    }
    best
}

struct World {
    agents: Vec<Agent>,
    /// Conflicts of AV `i` with agent `j`, arcs as (i, j).
    conflicts: BTreeMap<(usize, usize), Vec<PathConflict>>,
    /// Arc of each AV's first stop line over all its conflicts.
    entry: Vec<Option<f64>>,
}

impl World {
    fn new(scenario: &Scenario, graph: &LaneGraph) -> Result<Self, SimError> {
        let agents = build_agents(scenario, graph)?;
        let mut conflicts = BTreeMap::new();
        for i in 0..agents.len() {
            if agents[i].kind != AgentKind::Av {
                continue;
            }
            for j in 0..agents.len() {
                if i == j {
                    continue;
                }
                if agents[j].kind == AgentKind::Av && j < i {
                    let mirrored: Vec<PathConflict> = conflicts
                        .get(&(j, i))
                        .map(|cs: &Vec<PathConflict>| cs.iter().map(PathConflict::swapped).collect())
                        .unwrap_or_default();
                    conflicts.insert((i, j), mirrored);
                    continue;
                }
                let cs = path_conflicts(&agents[i].path, &agents[j].path, graph);
                conflicts.insert((i, j), cs);
            }
        }
        let entry = (0..agents.len())
            .map(|i| {
                conflicts
                    .range((i, 0)..(i + 1, 0))
                    .flat_map(|(_, cs)| cs.iter().map(|c| c.s_a - c.margin))
                    .min_by(f64::total_cmp)
            })
            .collect();
        Ok(Self { agents, conflicts, entry })
    }

    fn snapshot(&self) -> Vec<AgentState> {
        self.agents.iter().map(Agent::state).collect()
    }

    fn decide_av(&self, i: usize, t: f64, dt: f64, snapshot: &[AgentState], policy: &dyn Policy) -> f64 {
        let me = &self.agents[i];
        let Control::Av { route, vcap, .. } = &me.control else { unreachable!() };
        let mut conflicts = Vec::new();
        for (j, other) in self.agents.iter().enumerate() {
            if j == i || !other.interacting(t) {
                continue;
            }
            for c in self.conflicts.get(&(i, j)).into_iter().flatten() {
                conflicts.push(ConflictView {
                    other: other.id,
                    other_kind: other.kind,
                    point: c.point,
                    d_self: c.s_a - me.s,
                    d_other: c.s_b - other.s,
                    v_other: other.v,
                    margin: c.margin,
                    other_entered: self.entry[j].is_some_and(|e| other.s > e + ENTRY_TOL),
                });
            }
        }
        let others = self
            .agents
            .iter()
            .zip(snapshot)
            .filter(|(o, _)| o.id != me.id)
            .map(|(o, st)| OtherAgent { id: o.id, kind: o.kind, state: *st, path: &o.path.points })
            .collect();
        let start = me.path.cum.partition_point(|&c| c < me.s).min(me.path.points.len() - 1);
        let view = PolicyView {
            id: me.id,
            t,
            dt,
            state: snapshot[i],
            route,
            s: me.s,
            remaining: &me.path.points[start..],
            others,
            v_desired: cap_at(vcap, &me.path.cum, me.s),
            conflicts,
            entry: self.entry[i].map(|e| e - me.s),
            leader: find_leader(me, snapshot, &self.agents),
        };
        policy.decide(&view).target_accel.clamp(-MAX_BRAKE, MAX_ACCEL)
    }

    fn step(&mut self, t: f64, dt: f64, policy: &dyn Policy) {
        let snapshot = self.snapshot();
        let commands: Vec<Option<f64>> = (0..self.agents.len())
            .map(|i| {
                let a = &self.agents[i];
                if !a.interacting(t) {
                    return None;
                }
                Some(match &a.control {
                    Control::Av { .. } => self.decide_av(i, t, dt, &snapshot, policy),
                    Control::Npc { wp_arcs, wp_speeds, factor } => npc_accel(a, wp_arcs, wp_speeds, *factor),
                })
            })
            .collect();
        for (agent, cmd) in self.agents.iter_mut().zip(commands) {
            let Some(acc) = cmd else {
                agent.a = 0.0;
                continue;
            };
            let v = agent.v;
            let raw = v + acc * dt;
            let v_new = raw.max(0.0);
            let ds = if raw < 0.0 { v * v / (2.0 * -acc) } else { 0.5 * (v + v_new) * dt };
            let len = agent.path.length();
            agent.s = (agent.s + ds).min(len);
            agent.a = (v_new - v) / dt;
            agent.v = v_new;
            let done = match agent.kind {
                AgentKind::Av => len - agent.s <= 0.5 && agent.v < 0.05,
                AgentKind::Npc => len - agent.s <= 0.5,
            };
            if done {
                agent.finished = true;
                agent.v = 0.0;
                agent.a = 0.0;
            }
        }
    }

    fn scene(&self, t: f64) -> Scene {
        Scene { t, agents: self.agents.iter().map(|a| (a.id, a.state())).collect() }
    }

    fn all_still(&self, t: f64) -> bool {
        self.agents.iter().all(|a| a.finished || (a.triggered(t) && a.v < STILL))
    }

    fn collision(&self, distance: f64) -> Option<(AgentId, AgentId)> {
        let states: Vec<(AgentId, AgentState)> =
            self.agents.iter().filter(|a| !a.finished).map(|a| (a.id, a.state())).collect();
        let refs: Vec<(&AgentId, &AgentState)> = states.iter().map(|(id, s)| (id, s)).collect();
        first_close_pair(&refs, distance)
    }
}

/// Runs one scenario to the horizon, a collision, or global standstill.
pub fn simulate(
    scenario: &Scenario,
    graph: &LaneGraph,
    policy: &dyn Policy,
    cfg: &SimConfig,
) -> Result<Observation, SimError> {
    cfg.check()?;
    let violations = validate(scenario, graph, usize::MAX);
    if !violations.is_empty() {
        return Err(SimError::InvalidScenario(violations));
    }
    let mut world = World::new(scenario, graph)?;
    let roster = world
        .agents
        .iter()
        .map(|a| match &a.control {
            Control::Av { t_trigger, .. } => AgentInfo {
                id: a.id,
                kind: a.kind,
                t_trigger: *t_trigger,
                p_dest: scenario.av(a.id).map(|s| s.p_dest),
            },
            Control::Npc { .. } => AgentInfo { id: a.id, kind: a.kind, t_trigger: 0.0, p_dest: None },
        })
        .collect();

    let steps = (cfg.horizon / cfg.dt + 1e-9).floor() as usize;
    let mut scenes = vec![world.scene(0.0)];
    let mut collided_pair = world.collision(cfg.collision_distance);
    let mut still_since: Option<f64> = None;
    for n in 0..steps {
        if collided_pair.is_some() {
            break;
        }
        let t = n as f64 * cfg.dt;
        world.step(t, cfg.dt, policy);
        let t1 = (n + 1) as f64 * cfg.dt;
        scenes.push(world.scene(t1));
        collided_pair = world.collision(cfg.collision_distance);
        if collided_pair.is_some() {
            break;
        }
        if world.agents.iter().all(|a| a.finished) {
            break;
        }
        if world.all_still(t1) {
            let since = *still_since.get_or_insert(t1);
            if t1 - since >= cfg.stationary_timeout - 1e-9 {
                break;
            }
        } else {
            still_since = None;
        }
    }
    Ok(Observation {
        map_id: scenario.map_id,
        dt: cfg.dt,
        agents: roster,
        scenes,
        collision_flag: collided_pair.is_some(),
        collided_pair,
    })
}
