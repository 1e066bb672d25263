//! Longitudinal driving policies for autonomous vehicles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::road_network::Route;
use crate::scenario::{AgentId, AgentKind, AgentState};
use crate::Point;

pub const MAX_ACCEL: f64 = 3.0;
pub const MAX_BRAKE: f64 = 6.0;
pub const VEHICLE_LENGTH: f64 = 4.5;

/// Another agent whose planned path meets ours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConflictView {
    pub other: AgentId,
    pub other_kind: AgentKind,
    pub point: Point,
    /// Remaining distance along our route to the point; negative once passed.
    pub d_self: f64,
    /// Same for the other agent along its own path.
    pub d_other: f64,
    pub v_other: f64,
    /// Stop this far before the point when giving way.
    pub margin: f64,
    /// The other AV has passed its first stop line and is inside the junction.
    pub other_entered: bool,
}

/// The nearest agent ahead on our route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderView {
    pub id: AgentId,
    /// Bumper-to-bumper gap, meters.
    pub gap: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtherAgent<'a> {
    pub id: AgentId,
    pub kind: AgentKind,
    pub state: AgentState,
    /// Published path (planned route for AVs, waypoint path for NPCs).
    pub path: &'a [Point],
}

/// Everything a policy may look at for one decision.
#[derive(Clone, Debug)]
pub struct PolicyView<'a> {
    pub id: AgentId,
    pub t: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    pub state: AgentState,
    pub route: &'a Route,
    /// Arc position along the route.
    pub s: f64,
    pub remaining: &'a [Point],
    pub others: Vec<OtherAgent<'a>>,
    /// Speed the road allows here, including look-ahead for slower lanes.
    pub v_desired: f64,
    pub conflicts: Vec<ConflictView>,
    /// Distance to our first stop line over all conflicts; negative once passed.
    pub entry: Option<f64>,
    pub leader: Option<LeaderView>,
}

impl PolicyView<'_> {
    pub fn distance_to_end(&self) -> f64 {
        (self.route.total_length - self.s).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyCommand {
    pub target_accel: f64,
}

impl PolicyCommand {
    pub fn new(a: f64) -> Self {
        Self { target_accel: a.clamp(-MAX_BRAKE, MAX_ACCEL) }
    }
}

pub trait Policy: Send + Sync {
    fn decide(&self, view: &PolicyView) -> PolicyCommand;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ConservativeYield,
    PriorityTiebreak,
}

impl PolicyKind {
    pub fn policy(self) -> Box<dyn Policy> {
        match self {
            PolicyKind::ConservativeYield => Box::new(ConservativeYield::default()),
            PolicyKind::PriorityTiebreak => Box::new(PriorityTiebreak::default()),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conservative_yield" => Ok(PolicyKind::ConservativeYield),
            "priority_tiebreak" => Ok(PolicyKind::PriorityTiebreak),
            other => Err(format!("unknown policy {other:?} (expected conservative_yield or priority_tiebreak)")),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::ConservativeYield => "conservative_yield",
            PolicyKind::PriorityTiebreak => "priority_tiebreak",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YieldParams {
    /// ETA gap below which two agents contest a conflict point.
    pub t_yield: f64,
    /// A stopped agent within this distance of a conflict point holds it.
    pub r_hold: f64,
    /// Braking toward a stop line starts once this deceleration is needed.
    pub b_start: f64,
    /// Conflicts are ignored once the agent is this far past the point.
    pub clear: f64,
    /// Beyond this distance a conflict is not considered at all.
    pub horizon: f64,
    pub idm_s0: f64,
    pub idm_headway: f64,
    pub idm_comfort: f64,
}

impl Default for YieldParams {
    fn default() -> Self {
        Self {
            t_yield: 4.0,
            r_hold: 12.0,
            b_start: 2.0,
            clear: 3.0,
            horizon: 200.0,
            idm_s0: 2.0,
            idm_headway: 1.2,
            idm_comfort: 2.0,
        }
    }
}

const STOPPED: f64 = 0.1;
/// Slack around a stop line: closer than this counts as "at the line".
const LINE_TOL: f64 = 0.5;

fn free_accel(v: f64, v0: f64) -> f64 {
    if v0 <= 0.0 {
        return -MAX_BRAKE;
    }
    MAX_ACCEL * (1.0 - (v / v0).powi(4))
}

fn idm_accel(p: &YieldParams, v: f64, v0: f64, leader: &LeaderView) -> f64 {
    if leader.gap <= 0.1 {
        return -MAX_BRAKE;
    }
    let dv = v - leader.v;
    let s_star = p.idm_s0 + (v * p.idm_headway + v * dv / (2.0 * (MAX_ACCEL * p.idm_comfort).sqrt())).max(0.0);
    free_accel(v, v0) - MAX_ACCEL * (s_star / leader.gap).powi(2)
}

/// Acceleration that brings the agent to rest `dist` meters ahead, or none
/// while it can still cruise.
fn stop_accel(p: &YieldParams, v: f64, dist: f64, dt: f64) -> Option<f64> {
    if dist <= LINE_TOL {
        return Some(-v / dt);
    }
    let b_req = v * v / (2.0 * dist);
    (b_req >= p.b_start).then_some(-b_req)
}

fn required_brake(v: f64, dist: f64) -> f64 {
    if dist <= 0.0 {
        f64::INFINITY
    } else {
        v * v / (2.0 * dist)
    }
}

/// Car following plus the stop at the end of the route.
fn cruise_accel(p: &YieldParams, view: &PolicyView) -> f64 {
    let v = view.state.v;
    let mut a = match &view.leader {
        Some(l) => idm_accel(p, v, view.v_desired, l),
        None => free_accel(v, view.v_desired),
    };
    if let Some(s) = stop_accel(p, v, view.distance_to_end(), view.dt) {
        a = a.min(s);
    }
    a
}

fn ignored(p: &YieldParams, c: &ConflictView) -> bool {
    c.d_other < -p.clear || c.d_other > p.horizon || c.d_self > p.horizon
}

/// Yields whenever arrival times are close, with no notion of priority.
fn decide(p: &YieldParams, view: &PolicyView) -> PolicyCommand {
    let v = view.state.v;
    let dt = view.dt;
    let mut a = cruise_accel(p, view);
    for c in &view.conflicts {
        if ignored(p, c) {
            continue;
        }
        let line = c.d_self - c.margin;
        // Past our own stop line: we are inside and keep going.
        if line < -LINE_TOL {
            continue;
        }
        let other_line = c.d_other - c.margin;
        let other_inside = other_line < -LINE_TOL;
        let other_stopped = c.v_other < STOPPED;
        let other_committed = other_inside || (!other_stopped && required_brake(c.v_other, other_line) > MAX_BRAKE);
        let gives_way = if other_committed {
            true
        } else {
            let occupying = other_stopped && c.d_other <= p.r_hold;
            let eta_self = c.d_self.max(0.0) / v.max(1.0);
            let eta_other = if occupying { 0.0 } else { c.d_other.max(0.0) / c.v_other.max(1.0) };
            let holding = v < STOPPED && line <= LINE_TOL && c.d_other <= p.r_hold;
            (eta_self - eta_other).abs() < p.t_yield || holding
        };
        if !gives_way {
            continue;
        }
        // Too late to stop before the line: commit.
        if required_brake(v, line) > MAX_BRAKE && line > LINE_TOL {
            continue;
        }
        if let Some(s) = stop_accel(p, v, line, dt) {
            a = a.min(s);
        }
    }
    PolicyCommand::new(a)
}

/// First come, first served at the junction, lower id breaking ties.
/// Outside the junction an AV holds at its first stop line while a
/// conflicting AV is inside, or while one already waits at its line and
/// outranks it. Inside, it only yields to vehicles at the point itself or to
/// lower ids that are also inside.
fn decide_tiebreak(p: &YieldParams, view: &PolicyView) -> PolicyCommand {
    let v = view.state.v;
    let dt = view.dt;
    let mut a = cruise_accel(p, view);
    let inside = view.entry.is_some_and(|e| e < -LINE_TOL);
    let at_line = view.entry.is_some_and(|e| e <= LINE_TOL);
    for c in &view.conflicts {
        if ignored(p, c) {
            continue;
        }
        let line = c.d_self - c.margin;
        if line < -LINE_TOL {
            continue;
        }
        let other_line = c.d_other - c.margin;
        let other_stopped = c.v_other < STOPPED;
        let other_committed = other_line < -LINE_TOL || (!other_stopped && required_brake(c.v_other, other_line) > MAX_BRAKE);
        let contested = || {
            let eta_self = c.d_self.max(0.0) / v.max(1.0);
            let eta_other = c.d_other.max(0.0) / c.v_other.max(1.0);
            (eta_self - eta_other).abs() < p.t_yield
        };
        let gives_way = if other_committed {
            true
        } else if c.other_kind == AgentKind::Npc {
            contested()
        } else if inside {
            c.other_entered && c.other < view.id
        } else if c.other_entered {
            true
        } else {
            let other_at_line = other_line <= LINE_TOL;
            match (at_line, other_at_line) {
                (true, true) => c.other < view.id,
                (false, true) => true,
                (true, false) => false,
                // Stopped short of its line: queued behind someone, not contending.
                (false, false) if other_stopped => false,
                (false, false) => contested() && c.other < view.id,
            }
        };
        if !gives_way {
            continue;
        }
        let stop = if inside { line } else { view.entry.unwrap_or(line).min(line) };
        if required_brake(v, stop) > MAX_BRAKE && stop > LINE_TOL {
            continue;
        }
        if let Some(s) = stop_accel(p, v, stop, dt) {
            a = a.min(s);
        }
    }
    PolicyCommand::new(a)
}

/// Gives way whenever arrival times at a shared point are close, and keeps
/// waiting while the other agent lingers near it.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConservativeYield {
    pub params: YieldParams,
}

impl Policy for ConservativeYield {
    fn decide(&self, view: &PolicyView) -> PolicyCommand {
        decide(&self.params, view)
    }
}

/// Like [`ConservativeYield`], but contested conflicts go to the lower id.
#[derive(Clone, Copy, Debug, Default)]
pub struct PriorityTiebreak {
    pub params: YieldParams,
}

impl Policy for PriorityTiebreak {
    fn decide(&self, view: &PolicyView) -> PolicyCommand {
        decide_tiebreak(&self.params, view)
    }
}
