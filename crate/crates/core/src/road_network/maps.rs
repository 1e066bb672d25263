//! Procedurally built map regions.
//!
//! Right-hand traffic, lane width 3.5 m. Geometry is fully determined by the
//! constants below so every build is identical.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use super::{DirectionTag, Lane, LaneGraph, LaneId, MapId, SpawnPoint};
use crate::geometry::{arc_points, bezier_points};
use crate::Point;

const HALF_LANE: f64 = 1.75;
/// Half-width of the M1/M2 intersection box (box is 20 m across).
const BOX_HALF: f64 = 10.0;
const ARM_LENGTH: f64 = 50.0;
const URBAN_LIMIT: f64 = 10.0;
const TURN_LIMIT: f64 = 7.0;

const RING_RADIUS: f64 = 15.0;
/// Angular offset of entry/exit nodes from an arm's axis on the ring.
const RING_NODE_OFFSET_DEG: f64 = 20.0;
/// Distance from the center where approach lanes end and exit lanes start.
const RING_ARM_INNER: f64 = 26.0;
const RING_ARM_OUTER: f64 = 70.0;
const RING_LIMIT: f64 = 6.0;

const HIGHWAY_LIMIT: f64 = 20.0;
const RAMP_LIMIT: f64 = 15.0;
const RAMP_ANGLE_DEG: f64 = 15.0;
const RAMP_LENGTH: f64 = 150.0;
const HIGHWAY_START: f64 = -200.0;
const HIGHWAY_END: f64 = 300.0;

/// Builds one of the four built-in map regions.
pub fn build_builtin_map(map_id: MapId) -> LaneGraph {
    match map_id {
        MapId::M1 => junction(MapId::M1, &[0, 1, 2, 3]),
        MapId::M2 => junction(MapId::M2, &[0, 1, 3]),
        MapId::M3 => roundabout(),
        MapId::M4 => highway_merge(),
        // A custom map has no built-in geometry; callers load it from JSON.
        MapId::Custom => LaneGraph::new(MapId::Custom, vec![], BTreeMap::new(), vec![]).expect("empty map is valid"),
    }
}

fn rot(points: &[Point], quarter_turns: usize) -> Vec<Point> {
    let a = FRAC_PI_2 * quarter_turns as f64;
    points.iter().map(|p| round_mm(p.rotated(a))).collect()
}

// Rotation by multiples of 90 degrees leaves ~1e-15 noise; snapping keeps the
// maps exactly reproducible and symmetric.
fn round_mm(p: Point) -> Point {
    let r = |v: f64| (v * 1e9).round() / 1e9;
    Point::new(r(p.x), r(p.y))
}

fn wrap_heading(h: f64) -> f64 {
    crate::geometry::wrap_angle(h)
}

/// Arm `k` is the south arm rotated counter-clockwise by `k` quarter turns:
/// 0 = south, 1 = east, 2 = north, 3 = west.
fn junction(map_id: MapId, arms: &[usize]) -> LaneGraph {
    let approach = vec![Point::new(HALF_LANE, -BOX_HALF - ARM_LENGTH), Point::new(HALF_LANE, -BOX_HALF)];
    let exit = vec![Point::new(-HALF_LANE, -BOX_HALF), Point::new(-HALF_LANE, -BOX_HALF - ARM_LENGTH)];
    let straight = vec![Point::new(HALF_LANE, -BOX_HALF), Point::new(HALF_LANE, BOX_HALF)];
    let left = arc_points(Point::new(-BOX_HALF, -BOX_HALF), BOX_HALF + HALF_LANE, 0.0, FRAC_PI_2, 1.0);
    let right = arc_points(Point::new(BOX_HALF, -BOX_HALF), BOX_HALF - HALF_LANE, PI, FRAC_PI_2, 1.0);

    let id = |arm: usize, role: u32| LaneId(arm as u32 * 10 + role);
    let mut lanes = Vec::new();
    let mut conn: BTreeMap<LaneId, Vec<LaneId>> = BTreeMap::new();
    let mut spawns = Vec::new();
    for &k in arms {
        lanes.push(Lane::new(id(k, 0), rot(&approach, k), DirectionTag::Approach, URBAN_LIMIT));
        lanes.push(Lane::new(id(k, 1), rot(&exit, k), DirectionTag::Exit, URBAN_LIMIT));
        let mut movements = Vec::new();
        let moves: [(usize, &Vec<Point>, DirectionTag, f64, u32); 3] = [
            ((k + 1) % 4, &right, DirectionTag::RightTurn, TURN_LIMIT, 2),
            ((k + 2) % 4, &straight, DirectionTag::Straight, URBAN_LIMIT, 3),
            ((k + 3) % 4, &left, DirectionTag::LeftTurn, TURN_LIMIT, 4),
        ];
        for (to, pts, tag, limit, role) in moves {
            if arms.contains(&to) {
                let lid = id(k, role);
                lanes.push(Lane::new(lid, rot(pts, k), tag, limit));
                conn.insert(lid, vec![id(to, 1)]);
                movements.push(lid);
            }
        }
        conn.insert(id(k, 0), movements);
        let heading = wrap_heading(FRAC_PI_2 + FRAC_PI_2 * k as f64);
        for along in [5.0, 30.0] {
            let p = Point::new(HALF_LANE, -BOX_HALF - ARM_LENGTH + along);
            spawns.push(SpawnPoint { position: rot(&[p], k)[0], heading });
        }
    }
    lanes.sort_by_key(|l| l.id);
    LaneGraph::new(map_id, lanes, conn, spawns).expect("built-in junction is well formed")
}

fn on_ring(angle_deg: f64) -> Point {
    let a = angle_deg.to_radians();
    round_mm(Point::new(RING_RADIUS * a.cos(), RING_RADIUS * a.sin()))
}

/// Counter-clockwise tangent on the ring.
fn ring_tangent(angle_deg: f64) -> Point {
    let a = angle_deg.to_radians();
    Point::new(-a.sin(), a.cos())
}

/// Single-lane roundabout with four arms; traffic circulates counter-clockwise.
fn roundabout() -> LaneGraph {
    // South arm, rotated for the others.
    let entry_deg = 270.0 + RING_NODE_OFFSET_DEG;
    let exit_deg = 270.0 - RING_NODE_OFFSET_DEG;
    let approach = vec![Point::new(HALF_LANE, -RING_ARM_OUTER), Point::new(HALF_LANE, -RING_ARM_INNER)];
    let exit = vec![Point::new(-HALF_LANE, -RING_ARM_INNER), Point::new(-HALF_LANE, -RING_ARM_OUTER)];

    let p_in = on_ring(entry_deg);
    let t_in = ring_tangent(entry_deg);
    let u = (HALF_LANE - p_in.x) / t_in.x;
    let entry = bezier_points(approach[1], p_in + t_in * u, p_in, 14);

    let p_out = on_ring(exit_deg);
    let t_out = ring_tangent(exit_deg);
    let u = (-HALF_LANE - p_out.x) / t_out.x;
    let departure = bezier_points(p_out, p_out + t_out * u, exit[0], 14);

    let arm_id = |arm: usize, role: u32| LaneId(arm as u32 * 10 + role);
    let ring_id = |j: usize| LaneId(100 + j as u32);
    let mut lanes = Vec::new();
    let mut conn: BTreeMap<LaneId, Vec<LaneId>> = BTreeMap::new();
    let mut spawns = Vec::new();
    for k in 0..4 {
        lanes.push(Lane::new(arm_id(k, 0), rot(&approach, k), DirectionTag::Approach, URBAN_LIMIT));
        lanes.push(Lane::new(arm_id(k, 1), rot(&entry, k), DirectionTag::Entry, RING_LIMIT));
        lanes.push(Lane::new(arm_id(k, 2), rot(&departure, k), DirectionTag::Departure, RING_LIMIT));
        lanes.push(Lane::new(arm_id(k, 3), rot(&exit, k), DirectionTag::Exit, URBAN_LIMIT));
        conn.insert(arm_id(k, 0), vec![arm_id(k, 1)]);
        // Ring node 2k is arm k's exit, node 2k+1 its entry.
        conn.insert(arm_id(k, 1), vec![ring_id(2 * k + 1)]);
        conn.insert(arm_id(k, 2), vec![arm_id(k, 3)]);
        let heading = wrap_heading(FRAC_PI_2 + FRAC_PI_2 * k as f64);
        for along in [5.0, 25.0] {
            let p = Point::new(HALF_LANE, -RING_ARM_OUTER + along);
            spawns.push(SpawnPoint { position: rot(&[p], k)[0], heading });
        }
    }
    let node_deg = |j: usize| {
        let arm = j / 2;
        let base = 270.0 + 90.0 * arm as f64;
        if j.is_multiple_of(2) {
            base - RING_NODE_OFFSET_DEG
        } else {
            base + RING_NODE_OFFSET_DEG
        }
    };
    for j in 0..8 {
        let a0 = node_deg(j);
        let a1 = if j == 7 { node_deg(0) + 360.0 } else { node_deg(j + 1) };
        let mut pts = arc_points(Point::new(0.0, 0.0), RING_RADIUS, a0.to_radians(), a1.to_radians(), 1.0);
        // Pin the shared nodes to the exact values used by the connectors.
        let n = pts.len();
        pts[0] = on_ring(a0);
        pts[n - 1] = on_ring(a1);
        let pts: Vec<Point> = pts.into_iter().map(round_mm).collect();
        lanes.push(Lane::new(ring_id(j), pts, DirectionTag::Ring, RING_LIMIT));
        let next = (j + 1) % 8;
        let mut succ = vec![ring_id(next)];
        if next % 2 == 0 {
            succ.push(arm_id(next / 2, 2));
        }
        conn.insert(ring_id(j), succ);
    }
    // The rotated connectors must meet the ring nodes exactly.
    for lane in lanes.iter_mut() {
        let tag = lane.direction_tag;
        if tag == DirectionTag::Entry || tag == DirectionTag::Departure {
            let k = (lane.id.0 / 10) as usize;
            let base = 270.0 + 90.0 * k as f64;
            let mut pts = lane.centerline.clone();
            if tag == DirectionTag::Entry {
                let n = pts.len();
                pts[n - 1] = on_ring(base + RING_NODE_OFFSET_DEG);
            } else {
                pts[0] = on_ring(base - RING_NODE_OFFSET_DEG);
            }
            *lane = Lane::new(lane.id, pts, tag, lane.speed_limit);
        }
    }
    lanes.sort_by_key(|l| l.id);
    LaneGraph::new(MapId::M3, lanes, conn, spawns).expect("built-in roundabout is well formed")
}

/// Two-lane eastbound highway; a ramp merges into the outer (right) lane.
fn highway_merge() -> LaneGraph {
    let dir = Point::from_heading(RAMP_ANGLE_DEG.to_radians());
    // The ramp crosses the outer lane just before the outer lane's split
    // point and ends within the junction tolerance of its successor.
    let crossing = Point::new(-0.5, -HALF_LANE);
    let ramp_end = round_mm(crossing + dir * 0.5);
    let ramp_start = round_mm(crossing - dir * RAMP_LENGTH);

    let inner = LaneId(0);
    let outer_up = LaneId(1);
    let outer_down = LaneId(2);
    let ramp = LaneId(3);
    let lanes = vec![
        Lane::new(
            inner,
            vec![Point::new(HIGHWAY_START, HALF_LANE), Point::new(HIGHWAY_END, HALF_LANE)],
            DirectionTag::Mainline,
            HIGHWAY_LIMIT,
        ),
        Lane::new(
            outer_up,
            vec![Point::new(HIGHWAY_START, -HALF_LANE), Point::new(0.0, -HALF_LANE)],
            DirectionTag::Mainline,
            HIGHWAY_LIMIT,
        ),
        Lane::new(
            outer_down,
            vec![Point::new(0.0, -HALF_LANE), Point::new(HIGHWAY_END, -HALF_LANE)],
            DirectionTag::Mainline,
            HIGHWAY_LIMIT,
        ),
        Lane::new(ramp, vec![ramp_start, ramp_end], DirectionTag::Ramp, RAMP_LIMIT),
    ];
    let conn = BTreeMap::from([(outer_up, vec![outer_down]), (ramp, vec![outer_down])]);
    let ramp_heading = RAMP_ANGLE_DEG.to_radians();
    let spawns = vec![
        SpawnPoint { position: Point::new(HIGHWAY_START + 5.0, HALF_LANE), heading: 0.0 },
        SpawnPoint { position: Point::new(-120.0, HALF_LANE), heading: 0.0 },
        SpawnPoint { position: Point::new(HIGHWAY_START + 20.0, -HALF_LANE), heading: 0.0 },
        SpawnPoint { position: Point::new(-100.0, -HALF_LANE), heading: 0.0 },
        SpawnPoint { position: round_mm(ramp_start + dir * 5.0), heading: ramp_heading },
        SpawnPoint { position: round_mm(ramp_start + dir * 75.0), heading: ramp_heading },
    ];
    LaneGraph::new(MapId::M4, lanes, conn, spawns).expect("built-in highway is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polyline_crossings;

    fn movement_count(g: &LaneGraph) -> usize {
        g.lanes().iter().filter(|l| l.direction_tag.is_movement()).count()
    }

    #[test]
    fn m1_has_twelve_movements() {
        let g = build_builtin_map(MapId::M1);
        assert_eq!(movement_count(&g), 12);
        assert!(g.spawn_points().len() >= 8);
    }

    #[test]
    fn m2_has_six_movements() {
        assert_eq!(movement_count(&build_builtin_map(MapId::M2)), 6);
    }

    #[test]
    fn m3_ring_layout() {
        let g = build_builtin_map(MapId::M3);
        let count = |t| g.lanes().iter().filter(|l| l.direction_tag == t).count();
        assert_eq!(count(DirectionTag::Entry), 4);
        assert_eq!(count(DirectionTag::Departure), 4);
        assert_eq!(count(DirectionTag::Ring), 8);
        for l in g.lanes().iter().filter(|l| l.direction_tag == DirectionTag::Ring) {
            for p in &l.centerline {
                assert!((p.norm() - RING_RADIUS).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn m4_has_exactly_one_crossing_lane_pair() {
        let g = build_builtin_map(MapId::M4);
        let lanes = g.lanes();
        let mut pairs = Vec::new();
        for i in 0..lanes.len() {
            for j in i + 1..lanes.len() {
                if !polyline_crossings(&lanes[i].centerline, &lanes[j].centerline).is_empty() {
                    pairs.push((lanes[i].id, lanes[j].id));
                }
            }
        }
        assert_eq!(pairs, vec![(LaneId(1), LaneId(3))]);
    }

    #[test]
    fn builds_are_reproducible() {
        for m in MapId::BUILTIN {
            assert_eq!(build_builtin_map(m).to_json(), build_builtin_map(m).to_json());
        }
    }

    #[test]
    fn junctions_connect_within_tolerance() {
        for m in MapId::BUILTIN {
            let g = build_builtin_map(m);
            for (pred, succs) in g.connectivity() {
                for s in succs {
                    let gap = g.lane(*pred).unwrap().last().distance(g.lane(*s).unwrap().first());
                    assert!(gap <= 0.5, "{m}: {pred}->{s} gap {gap}");
                }
            }
        }
    }
}
