//! Scenario fixtures shared by the integration tests.
#![allow(dead_code)]

use dlfuzz::oracle::{evaluate, naive_timer, OracleConfig, OracleVerdict};
use dlfuzz::road_network::{build_builtin_map, LaneGraph, MapId};
use dlfuzz::scenario::{AgentId, AvSpec, NpcSpec, Observation, Scenario, Waypoint};
use dlfuzz::simulator::{simulate, PolicyKind, SimConfig};
use dlfuzz::Point;

pub fn av(id: u32, start: (f64, f64), dest: (f64, f64), t_trigger: f64) -> AvSpec {
    AvSpec { id: AgentId(id), p_start: Point::new(start.0, start.1), p_dest: Point::new(dest.0, dest.1), t_trigger }
}

/// Two AVs on M1 reaching the junction at the same moment from the south
/// and the east, one going straight north, the other straight west.
pub fn symmetric_standoff() -> Scenario {
    Scenario {
        map_id: MapId::M1,
        rng_seed: 1,
        avs: vec![av(1, (1.75, -55.0), (1.75, 60.0), 0.0), av(2, (55.0, 1.75), (-60.0, 1.75), 0.0)],
        npcs: vec![],
    }
}

/// Two AVs queued on the south approach of M1 while a slow stream of NPCs
/// crosses westbound in front of them. Both AVs stand still for a long
/// time, but only the NPCs hold them up.
pub fn stopped_queue() -> Scenario {
    let npcs = (0..4)
        .map(|k| {
            let mut x = 14.0 + 10.0 * k as f64;
            let mut waypoints = Vec::new();
            while x > -55.0 {
                waypoints.push(Waypoint { p: Point::new(x, 1.75), theta: std::f64::consts::PI, v: 2.0 });
                x -= 5.0;
            }
            NpcSpec { id: AgentId(3 + k), waypoints }
        })
        .collect();
    Scenario {
        map_id: MapId::M1,
        rng_seed: 7,
        avs: vec![av(1, (1.75, -30.0), (1.75, 60.0), 0.0), av(2, (1.75, -55.0), (1.75, 60.0), 0.0)],
        npcs,
    }
}

pub fn sim_config() -> SimConfig {
    SimConfig { horizon: 60.0, ..SimConfig::default() }
}

pub fn run(s: &Scenario, policy: PolicyKind) -> (Observation, LaneGraph) {
    let g = build_builtin_map(s.map_id);
    let obs = simulate(s, &g, policy.policy().as_ref(), &sim_config()).expect("fixture simulates");
    (obs, g)
}

pub fn waitfor(s: &Scenario, policy: PolicyKind) -> OracleVerdict {
    let (obs, g) = run(s, policy);
    evaluate(&obs, &g, &OracleConfig::default()).expect("fixture is collision free")
}

pub fn naive(s: &Scenario, policy: PolicyKind) -> OracleVerdict {
    let (obs, _) = run(s, policy);
    naive_timer(&obs, &OracleConfig::default()).expect("fixture is collision free")
}
