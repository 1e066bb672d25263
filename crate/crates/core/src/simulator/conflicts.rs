//! Precomputed interaction points between two planned paths.

use crate::geometry::{cumulative_lengths, heading_diff, polyline_crossings, project_onto, sample_at};
use crate::road_network::{LaneGraph, LaneId, Route};
use crate::Point;

/// Conflicts closer than this along the first path collapse into one.
const DEDUP_RADIUS: f64 = 4.0;
/// Vehicles stopped at their stop lines should be at least this far apart.
const STOP_CLEARANCE: f64 = 4.0;
/// A vehicle waiting at its stop line keeps this far from the other path.
const PATH_CLEARANCE: f64 = 3.0;
/// Stretch of the other path, either side of the conflict, checked for clearance.
const PATH_WINDOW: f64 = 15.0;
pub const MIN_STOP_MARGIN: f64 = 3.0;
pub const MAX_STOP_MARGIN: f64 = 10.0;

/// A polyline whose vertices carry the lane they were sampled from.
/// `lanes[i + 1]` labels the segment `points[i]..points[i + 1]`.
#[derive(Clone, Debug)]
pub struct LabeledPath {
    pub points: Vec<Point>,
    pub cum: Vec<f64>,
    pub lanes: Vec<LaneId>,
}

impl LabeledPath {
    pub fn from_route(route: &Route) -> Self {
        Self { points: route.points.clone(), cum: cumulative_lengths(&route.points), lanes: route.point_lanes.clone() }
    }

    /// Labels an arbitrary polyline with the nearest heading-compatible lane
    /// of each segment.
    pub fn from_polyline(points: Vec<Point>, graph: &LaneGraph) -> Self {
        let mut lanes = Vec::with_capacity(points.len());
        for i in 0..points.len() {
            let seg = if i == 0 { 0 } else { i - 1 };
            let lane = match (points.get(seg), points.get(seg + 1)) {
                (Some(&a), Some(&b)) => graph.nearest_lane(a.lerp(b, 0.5), Some((b - a).heading())),
                (Some(&a), None) => graph.nearest_lane(a, None),
                _ => None,
            };
            lanes.push(lane.map(|h| h.lane).unwrap_or(LaneId(u32::MAX)));
        }
        Self { cum: cumulative_lengths(&points), points, lanes }
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    pub fn segment_lane(&self, i: usize) -> LaneId {
        self.lanes[(i + 1).min(self.lanes.len() - 1)]
    }

    /// Point and heading at arc `s`.
    pub fn sample(&self, s: f64) -> (Point, f64) {
        sample_at(&self.points, &self.cum, s)
    }

    /// Distinct lanes in travel order with the index of their first point.
    fn lane_runs(&self) -> Vec<(LaneId, usize)> {
        let mut out: Vec<(LaneId, usize)> = Vec::new();
        for (i, &l) in self.lanes.iter().enumerate() {
            if out.last().is_none_or(|&(prev, _)| prev != l) {
                out.push((l, i));
            }
        }
        out
    }

    fn arc_near(&self, p: Point, index: usize) -> f64 {
        let lo = index.saturating_sub(3);
        let hi = (index + 3).min(self.points.len());
        project_onto(&self.points[lo..hi], &self.cum[lo..hi], p)
            .map(|pr| pr.arc)
            .unwrap_or(self.cum[index])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConflictKind {
    Crossing,
    Merge,
}

/// A point both paths pass through, with arc positions on each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathConflict {
    pub kind: ConflictKind,
    pub point: Point,
    pub s_a: f64,
    pub s_b: f64,
    /// Distance before the point at which both vehicles should stop.
    pub margin: f64,
}

impl PathConflict {
    pub fn swapped(&self) -> Self {
        Self { s_a: self.s_b, s_b: self.s_a, ..*self }
    }
}

/// First lane both paths enter from different predecessors.
fn merge_point(a: &LabeledPath, b: &LabeledPath, graph: &LaneGraph) -> Option<PathConflict> {
    let runs_a = a.lane_runs();
    let runs_b = b.lane_runs();
    for (ka, &(lane, ia)) in runs_a.iter().enumerate() {
        let Some(kb) = runs_b.iter().position(|&(l, _)| l == lane) else {
            continue;
        };
        // Sharing the first lane is plain car following.
        if ka == 0 || kb == 0 || runs_a[ka - 1].0 == runs_b[kb - 1].0 {
            return None;
        }
        let ib = runs_b[kb].1;
        let point = graph.lane(lane).map(|l| l.first()).unwrap_or(a.points[ia]);
        return Some(PathConflict {
            kind: ConflictKind::Merge,
            point,
            s_a: a.arc_near(point, ia),
            s_b: b.arc_near(point, ib),
            margin: 0.0,
        });
    }
    None
}

/// Distance from `p` to `path` within `PATH_WINDOW` of arc `s`.
fn distance_near(path: &LabeledPath, s: f64, p: Point) -> f64 {
    let lo = path.cum.partition_point(|&c| c < s - PATH_WINDOW).saturating_sub(1);
    let hi = (path.cum.partition_point(|&c| c <= s + PATH_WINDOW) + 1).min(path.points.len());
    project_onto(&path.points[lo..hi], &path.cum[lo..hi], p).map_or(f64::INFINITY, |pr| pr.distance)
}

fn stop_margin(a: &LabeledPath, b: &LabeledPath, s_a: f64, s_b: f64) -> f64 {
    let mut m = MIN_STOP_MARGIN;
    while m < MAX_STOP_MARGIN {
        let (pa, _) = a.sample(s_a - m);
        let (pb, _) = b.sample(s_b - m);
        if pa.distance(pb) >= STOP_CLEARANCE
            && distance_near(b, s_b, pa) >= PATH_CLEARANCE - 1e-9
            && distance_near(a, s_a, pb) >= PATH_CLEARANCE - 1e-9
        {
            break;
        }
        m += 0.5;
    }
    m.min(MAX_STOP_MARGIN)
}

/// Crossings between differently-labelled segments plus the merge point, if
/// any, sorted by arc along `a` and deduplicated within 4 m.
pub fn path_conflicts(a: &LabeledPath, b: &LabeledPath, graph: &LaneGraph) -> Vec<PathConflict> {
    if a.points.len() < 2 || b.points.len() < 2 {
        return Vec::new();
    }
    let mut all: Vec<PathConflict> = polyline_crossings(&a.points, &b.points)
        .into_iter()
        .filter(|c| a.segment_lane(c.ia) != b.segment_lane(c.ib))
        .filter(|c| {
            // Near-parallel touching of adjacent lanes is not a crossing.
            let ha = (a.points[c.ia + 1] - a.points[c.ia]).heading();
            let hb = (b.points[c.ib + 1] - b.points[c.ib]).heading();
            heading_diff(ha, hb) > 1e-3
        })
        .map(|c| PathConflict {
            kind: ConflictKind::Crossing,
            point: c.point,
            s_a: a.cum[c.ia] + a.points[c.ia].distance(c.point),
            s_b: b.cum[c.ib] + b.points[c.ib].distance(c.point),
            margin: 0.0,
        })
        .collect();
    all.extend(merge_point(a, b, graph));
    all.sort_by(|x, y| x.s_a.total_cmp(&y.s_a).then(x.s_b.total_cmp(&y.s_b)));

    let mut kept: Vec<PathConflict> = Vec::new();
    for c in all {
        if kept.iter().any(|k| k.point.distance(c.point) < DEDUP_RADIUS) {
            continue;
        }
        kept.push(c);
    }
    for c in &mut kept {
        c.margin = stop_margin(a, b, c.s_a, c.s_b);
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_network::{build_builtin_map, plan_route, MapId};

    fn path(g: &LaneGraph, from: Point, to: Point) -> LabeledPath {
        LabeledPath::from_route(&plan_route(g, from, to).unwrap())
    }

    #[test]
    fn perpendicular_straights_cross_once() {
        let g = build_builtin_map(MapId::M1);
        let a = path(&g, Point::new(1.75, -55.0), Point::new(1.75, 60.0));
        let b = path(&g, Point::new(55.0, 1.75), Point::new(-60.0, 1.75));
        let cs = path_conflicts(&a, &b, &g);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].kind, ConflictKind::Crossing);
        assert!(cs[0].point.distance(Point::new(1.75, 1.75)) < 1e-9);
        assert!((cs[0].s_a - 56.75).abs() < 1e-6);
        assert!((cs[0].s_b - 53.25).abs() < 1e-6);
        assert_eq!(cs[0].margin, MIN_STOP_MARGIN);
    }

    #[test]
    fn shared_approach_is_not_a_conflict() {
        let g = build_builtin_map(MapId::M1);
        let a = path(&g, Point::new(1.75, -55.0), Point::new(1.75, 60.0));
        let b = path(&g, Point::new(1.75, -30.0), Point::new(60.0, -1.75));
        assert!(path_conflicts(&a, &b, &g).is_empty());
    }

    #[test]
    fn acute_crossing_stops_clear_of_the_other_path() {
        let g = build_builtin_map(MapId::M1);
        let turn = path(&g, Point::new(1.75, -55.0), Point::new(-60.0, 1.75));
        let down = path(&g, Point::new(-1.75, 55.0), Point::new(-1.75, -60.0));
        for c in path_conflicts(&turn, &down, &g) {
            let (p, _) = turn.sample(c.s_a - c.margin);
            assert!(distance_near(&down, c.s_b, p) >= PATH_CLEARANCE - 1e-9, "{c:?}");
            let (q, _) = down.sample(c.s_b - c.margin);
            assert!(distance_near(&turn, c.s_a, q) >= PATH_CLEARANCE - 1e-9, "{c:?}");
        }
    }

    #[test]
    fn highway_merge_has_wide_margin() {
        let g = build_builtin_map(MapId::M4);
        let main = g.spawn_points().iter().find(|s| (s.position.y + 1.75).abs() < 1e-6).unwrap().position;
        let ramp = g.lane(LaneId(3)).unwrap().first();
        let a = path(&g, main, Point::new(300.0, -1.75));
        let b = path(&g, ramp, Point::new(300.0, -1.75));
        let cs = path_conflicts(&a, &b, &g);
        assert_eq!(cs.len(), 1, "{cs:?}");
        assert!(cs[0].margin > MIN_STOP_MARGIN);
        let (pa, _) = a.sample(cs[0].s_a - cs[0].margin);
        let (pb, _) = b.sample(cs[0].s_b - cs[0].margin);
        assert!(pa.distance(pb) > 2.0);
    }

    #[test]
    fn roundabout_entry_merges_with_circulating_traffic() {
        let g = build_builtin_map(MapId::M3);
        // Enters from the south and leaves north; the other enters east and leaves west.
        let south = g.spawn_points()[0].position;
        let east = g.spawn_points()[2].position;
        let a = path(&g, south, Point::new(1.75, 70.0));
        let b = path(&g, east, Point::new(-70.0, 1.75));
        let cs = path_conflicts(&a, &b, &g);
        assert!(cs.iter().any(|c| c.kind == ConflictKind::Merge), "{cs:?}");
    }
}
