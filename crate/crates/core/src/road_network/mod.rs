//! Lane-graph road model: lanes, connectivity, spawn points, route planning.

mod maps;
mod routing;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cumulative_lengths, heading_diff, project_onto, sample_at, Projection};
use crate::Point;

pub use maps::build_builtin_map;
pub use routing::{plan_route, Route, RouteError};

/// Maximum gap between a lane's last point and a successor's first point.
pub const JUNCTION_TOLERANCE: f64 = 0.5;
/// Maximum distance between a spawn point (or route endpoint) and a lane.
pub const ON_LANE_TOLERANCE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapId {
    M1,
    M2,
    M3,
    M4,
    Custom,
}

impl MapId {
    pub const BUILTIN: [MapId; 4] = [MapId::M1, MapId::M2, MapId::M3, MapId::M4];
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapId::M1 => "M1",
            MapId::M2 => "M2",
            MapId::M3 => "M3",
            MapId::M4 => "M4",
            MapId::Custom => "Custom",
        };
        f.write_str(s)
    }
}

impl FromStr for MapId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(MapId::M1),
            "m2" => Ok(MapId::M2),
            "m3" => Ok(MapId::M3),
            "m4" => Ok(MapId::M4),
            "custom" => Ok(MapId::Custom),
            other => Err(format!("unknown map `{other}` (expected m1, m2, m3, m4)")),
        }
    }
}

/// What kind of travel a lane carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionTag {
    Approach,
    Exit,
    Straight,
    LeftTurn,
    RightTurn,
    Entry,
    Departure,
    Ring,
    Mainline,
    Ramp,
    #[default]
    Unspecified,
}

impl DirectionTag {
    /// Through or turning movement inside a junction.
    pub fn is_movement(self) -> bool {
        matches!(self, DirectionTag::Straight | DirectionTag::LeftTurn | DirectionTag::RightTurn)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Point>,
    pub direction_tag: DirectionTag,
    /// m/s
    pub speed_limit: f64,
    cum: Vec<f64>,
}

impl Lane {
    pub fn new(id: LaneId, centerline: Vec<Point>, direction_tag: DirectionTag, speed_limit: f64) -> Self {
        let cum = cumulative_lengths(&centerline);
        Self { id, centerline, direction_tag, speed_limit, cum }
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn first(&self) -> Point {
        self.centerline[0]
    }

    pub fn last(&self) -> Point {
        self.centerline[self.centerline.len() - 1]
    }

    pub fn project(&self, p: Point) -> Projection<f64> {
        project_onto(&self.centerline, &self.cum, p).expect("lane has points")
    }

    /// Point and heading at arc length `s`.
    pub fn sample(&self, s: f64) -> (Point, f64) {
        sample_at(&self.centerline, &self.cum, s)
    }

    /// Centerline portion between arc lengths `from <= to`.
    pub fn slice(&self, from: f64, to: f64) -> Vec<Point> {
        let mut out = vec![self.sample(from).0];
        for (p, &c) in self.centerline.iter().zip(&self.cum) {
            if c > from && c < to {
                out.push(*p);
            }
        }
        let end = self.sample(to).0;
        if to > from {
            out.push(end);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnPoint {
    pub position: Point,
    /// radians
    pub heading: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("duplicate lane id {0}")]
    DuplicateLane(LaneId),
    #[error("lane {0} needs at least two distinct consecutive points")]
    DegenerateLane(LaneId),
    #[error("connectivity references unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("successor {succ} starts {gap:.3} m away from the end of {pred}")]
    Disconnected { pred: LaneId, succ: LaneId, gap: f64 },
    #[error("spawn point {index} is {distance:.3} m from the nearest lane")]
    SpawnOffLane { index: usize, distance: f64 },
    #[error("invalid map document: {0}")]
    Parse(String),
}

/// A located position on a lane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneHit {
    pub lane: LaneId,
    /// Arc position along the lane.
    pub arc: f64,
    pub distance: f64,
    pub heading: f64,
}

/// Directed lane network. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneGraph {
    map_id: MapId,
    lanes: Vec<Lane>,
    index: BTreeMap<LaneId, usize>,
    connectivity: BTreeMap<LaneId, Vec<LaneId>>,
    predecessors: BTreeMap<LaneId, Vec<LaneId>>,
    spawn_points: Vec<SpawnPoint>,
}

impl LaneGraph {
    pub fn new(
        map_id: MapId,
        lanes: Vec<Lane>,
        connectivity: BTreeMap<LaneId, Vec<LaneId>>,
        spawn_points: Vec<SpawnPoint>,
    ) -> Result<Self, MapError> {
        let mut index = BTreeMap::new();
        for (i, lane) in lanes.iter().enumerate() {
            if index.insert(lane.id, i).is_some() {
                return Err(MapError::DuplicateLane(lane.id));
            }
            if lane.centerline.len() < 2 || lane.centerline.windows(2).any(|w| w[0] == w[1]) {
                return Err(MapError::DegenerateLane(lane.id));
            }
        }
        let mut conn: BTreeMap<LaneId, Vec<LaneId>> = lanes.iter().map(|l| (l.id, Vec::new())).collect();
        let mut predecessors: BTreeMap<LaneId, Vec<LaneId>> = conn.clone();
        for (pred, succs) in &connectivity {
            let p = index.get(pred).ok_or(MapError::UnknownLane(*pred))?;
            let mut succs = succs.clone();
            succs.sort();
            succs.dedup();
            for s in &succs {
                let si = index.get(s).ok_or(MapError::UnknownLane(*s))?;
                let gap = lanes[*p].last().distance(lanes[*si].first());
                if gap > JUNCTION_TOLERANCE {
                    return Err(MapError::Disconnected { pred: *pred, succ: *s, gap });
                }
                predecessors.get_mut(s).expect("known lane").push(*pred);
            }
            conn.insert(*pred, succs);
        }
        let graph = Self { map_id, lanes, index, connectivity: conn, predecessors, spawn_points };
        for (i, sp) in graph.spawn_points.iter().enumerate() {
            let d = graph.distance_to_network(sp.position);
            if d > ON_LANE_TOLERANCE {
                return Err(MapError::SpawnOffLane { index: i, distance: d });
            }
        }
        Ok(graph)
    }

    pub fn map_id(&self) -> MapId {
        self.map_id
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.index.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn successors(&self, id: LaneId) -> &[LaneId] {
        self.connectivity.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predecessors(&self, id: LaneId) -> &[LaneId] {
        self.predecessors.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn connectivity(&self) -> &BTreeMap<LaneId, Vec<LaneId>> {
        &self.connectivity
    }

    pub fn spawn_points(&self) -> &[SpawnPoint] {
        &self.spawn_points
    }

    /// End points of lanes without successors, in lane-id order.
    pub fn destination_points(&self) -> Vec<Point> {
        self.lanes.iter().filter(|l| self.successors(l.id).is_empty()).map(Lane::last).collect()
    }

    /// True when `a` and `b` are the same lane or directly connected.
    pub fn adjacent_or_same(&self, a: LaneId, b: LaneId) -> bool {
        a == b || self.successors(a).contains(&b) || self.successors(b).contains(&a)
    }

    pub fn distance_to_network(&self, p: Point) -> f64 {
        self.lanes.iter().map(|l| l.project(p).distance).fold(f64::INFINITY, f64::min)
    }

    /// All lanes passing within `tolerance` of `p`, sorted by lane id.
    pub fn locate(&self, p: Point, tolerance: f64) -> Vec<LaneHit> {
        self.lanes
            .iter()
            .filter_map(|l| {
                let pr = l.project(p);
                (pr.distance <= tolerance).then_some(LaneHit {
                    lane: l.id,
                    arc: pr.arc,
                    distance: pr.distance,
                    heading: pr.heading,
                })
            })
            .collect()
    }

    /// Nearest lane to `p`. With a heading hint, lanes whose local direction
    /// differs by more than 60 degrees are only used when nothing aligned lies
    /// within 2 m. Ties go to the smallest lane id.
    pub fn nearest_lane(&self, p: Point, heading: Option<f64>) -> Option<LaneHit> {
        let hits: Vec<LaneHit> = self
            .lanes
            .iter()
            .map(|l| {
                let pr = l.project(p);
                LaneHit { lane: l.id, arc: pr.arc, distance: pr.distance, heading: pr.heading }
            })
            .collect();
        let best = |cands: &mut dyn Iterator<Item = &LaneHit>| -> Option<LaneHit> {
            let mut best: Option<LaneHit> = None;
            for h in cands {
                // Strictly closer by more than a millimeter wins; otherwise keep the lower id.
                if best.as_ref().is_none_or(|b| h.distance < b.distance - 1e-3) {
                    best = Some(*h);
                }
            }
            best
        };
        if let Some(hd) = heading {
            let aligned = best(&mut hits.iter().filter(|h| heading_diff(h.heading, hd) <= 60f64.to_radians()));
            if let Some(a) = aligned {
                if a.distance <= 2.0 {
                    return Some(a);
                }
            }
        }
        best(&mut hits.iter())
    }

    /// Serializes to the custom-map JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MapDocument::from(self)).expect("map serializes")
    }

    /// Loads a custom map from its JSON document.
    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let doc: MapDocument = serde_json::from_str(text).map_err(|e| MapError::Parse(e.to_string()))?;
        doc.into_graph()
    }
}

#[derive(Serialize, Deserialize)]
struct LaneDocument {
    id: LaneId,
    centerline: Vec<Point>,
    speed_limit: f64,
    #[serde(default, skip_serializing_if = "is_unspecified")]
    direction_tag: DirectionTag,
}

fn is_unspecified(t: &DirectionTag) -> bool {
    *t == DirectionTag::Unspecified
}

#[derive(Serialize, Deserialize)]
struct MapDocument {
    lanes: Vec<LaneDocument>,
    connectivity: BTreeMap<LaneId, Vec<LaneId>>,
    spawn_points: Vec<[f64; 3]>,
}

impl From<&LaneGraph> for MapDocument {
    fn from(g: &LaneGraph) -> Self {
        Self {
            lanes: g
                .lanes
                .iter()
                .map(|l| LaneDocument {
                    id: l.id,
                    centerline: l.centerline.clone(),
                    speed_limit: l.speed_limit,
                    direction_tag: l.direction_tag,
                })
                .collect(),
            connectivity: g.connectivity.clone(),
            spawn_points: g.spawn_points.iter().map(|s| [s.position.x, s.position.y, s.heading]).collect(),
        }
    }
}

impl MapDocument {
    fn into_graph(self) -> Result<LaneGraph, MapError> {
        let lanes = self
            .lanes
            .into_iter()
            .map(|l| Lane::new(l.id, l.centerline, l.direction_tag, l.speed_limit))
            .collect();
        let spawns = self
            .spawn_points
            .into_iter()
            .map(|[x, y, h]| SpawnPoint { position: Point::new(x, y), heading: h })
            .collect();
        LaneGraph::new(MapId::Custom, lanes, self.connectivity, spawns)
    }
}
