//! Shortest-path route planning over the lane graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LaneGraph, LaneHit, LaneId, ON_LANE_TOLERANCE};
use crate::geometry::{polyline_length, resample};
use crate::Point;

/// Spacing of route points, meters.
pub const ROUTE_SPACING: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("point ({x:.3}, {y:.3}) is not within 1 m of any lane")]
    OffLane { x: f64, y: f64 },
    #[error("no route from ({0:.3}, {1:.3}) to ({2:.3}, {3:.3})")]
    NoRoute(f64, f64, f64, f64),
}

/// A planned path along lane centerlines, resampled at 1 m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lane_sequence: Vec<LaneId>,
    pub points: Vec<Point>,
    pub total_length: f64,
    /// Lane each point was sampled from.
    pub point_lanes: Vec<LaneId>,
}

impl Route {
    /// Lane carrying the segment `points[i]..points[i + 1]`.
    pub fn segment_lane(&self, i: usize) -> LaneId {
        self.point_lanes[(i + 1).min(self.point_lanes.len() - 1)]
    }
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    lane: LaneId,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on (cost, lane id).
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.partial_cmp(&self.cost).unwrap_or(Ordering::Equal).then(o.lane.cmp(&self.lane))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const COST_EPS: f64 = 1e-9;

/// Costs to reach the start of every lane when leaving `from` at arc `s0`.
fn dijkstra(graph: &LaneGraph, from: LaneId, s0: f64) -> BTreeMap<LaneId, (f64, Option<LaneId>)> {
    let mut best: BTreeMap<LaneId, (f64, Option<LaneId>)> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start_len = graph.lane(from).map(|l| l.length()).unwrap_or(0.0);
    let relax = |best: &mut BTreeMap<LaneId, (f64, Option<LaneId>)>,
                 heap: &mut BinaryHeap<Entry>,
                 lane: LaneId,
                 cost: f64,
                 pred: LaneId| {
        let better = match best.get(&lane) {
            None => true,
            Some(&(c, p)) => cost < c - COST_EPS || ((cost - c).abs() <= COST_EPS && Some(pred) < p),
        };
        if better {
            best.insert(lane, (cost, Some(pred)));
            heap.push(Entry { cost, lane });
        }
    };
    for &s in graph.successors(from) {
        relax(&mut best, &mut heap, s, start_len - s0, from);
    }
    while let Some(Entry { cost, lane }) = heap.pop() {
        if best.get(&lane).is_some_and(|&(c, _)| cost > c + COST_EPS) {
            continue;
        }
        let len = graph.lane(lane).map(|l| l.length()).unwrap_or(0.0);
        for &s in graph.successors(lane) {
            relax(&mut best, &mut heap, s, cost + len, lane);
        }
    }
    best
}

fn candidates(graph: &LaneGraph, p: Point) -> Result<Vec<LaneHit>, RouteError> {
    let hits = graph.locate(p, ON_LANE_TOLERANCE);
    if hits.is_empty() {
        return Err(RouteError::OffLane { x: p.x, y: p.y });
    }
    Ok(hits)
}

/// Plans the shortest lane path from `start` to `dest`.
///
/// Both points must lie within 1 m of a lane. The route starts and ends at
/// their projections. Equal-length alternatives are broken toward the
/// lexicographically smallest lane sequence.
pub fn plan_route(graph: &LaneGraph, start: Point, dest: Point) -> Result<Route, RouteError> {
    let starts = candidates(graph, start)?;
    let dests = candidates(graph, dest)?;

    let mut best: Option<(f64, Vec<LaneId>, f64, f64)> = None;
    let mut consider = |cost: f64, seq: Vec<LaneId>, s0: f64, s1: f64| {
        let better = match &best {
            None => true,
            Some((c, bs, _, _)) => cost < c - COST_EPS || ((cost - c).abs() <= COST_EPS && seq < *bs),
        };
        if better {
            best = Some((cost, seq, s0, s1));
        }
    };
    for s in &starts {
        let tree = dijkstra(graph, s.lane, s.arc);
        for d in &dests {
            if d.lane == s.lane && d.arc + COST_EPS >= s.arc {
                consider((d.arc - s.arc).max(0.0), vec![s.lane], s.arc, d.arc);
            }
            if let Some(&(c, _)) = tree.get(&d.lane) {
                let mut seq = vec![d.lane];
                let mut cur = d.lane;
                // Walk predecessors back to the start lane; loops end at the start.
                while let Some(&(_, Some(p))) = tree.get(&cur) {
                    seq.push(p);
                    if p == s.lane {
                        break;
                    }
                    cur = p;
                    if seq.len() > graph.lanes().len() + 1 {
                        break;
                    }
                }
                seq.reverse();
                if seq.first() == Some(&s.lane) {
                    consider(c + d.arc, seq, s.arc, d.arc);
                }
            }
        }
    }
    let (_, seq, s0, s1) = best.ok_or(RouteError::NoRoute(start.x, start.y, dest.x, dest.y))?;
    Ok(build_route(graph, seq, s0, s1))
}

fn build_route(graph: &LaneGraph, seq: Vec<LaneId>, s0: f64, s1: f64) -> Route {
    let mut raw: Vec<Point> = Vec::new();
    // (arc position where the lane's portion ends, lane)
    let mut bounds: Vec<(f64, LaneId)> = Vec::new();
    let n = seq.len();
    for (k, id) in seq.iter().enumerate() {
        let lane = graph.lane(*id).expect("route lanes exist");
        let from = if k == 0 { s0 } else { 0.0 };
        let to = if k == n - 1 { s1 } else { lane.length() };
        let part = lane.slice(from, to);
        for p in part {
            if raw.last().is_none_or(|q| q.distance(p) > 1e-9) {
                raw.push(p);
            }
        }
        bounds.push((polyline_length(&raw), *id));
    }
    let points = resample(&raw, ROUTE_SPACING);
    let total_length = polyline_length(&points);
    let raw_total = polyline_length(&raw);
    let point_lanes = points
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let arc = if i + 1 == points.len() { raw_total } else { i as f64 * ROUTE_SPACING };
            bounds
                .iter()
                .find(|(end, _)| arc <= *end + 1e-9)
                .map(|(_, id)| *id)
                .unwrap_or(seq[n - 1])
        })
        .collect();
    Route { lane_sequence: seq, points, total_length, point_lanes }
}
