//! Spatial and temporal conflict scores over executed AV trajectories.
//!
//! Lower scores mean more contention: many crossings between AV paths, and
//! AVs reaching a shared crossing close together in time and at low speed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{polyline_crossings, Crossing};
use crate::road_network::{LaneGraph, LaneId};
use crate::scenario::{av_trajectory, AgentId, Observation, ScenarioError, TrajectorySample};
use crate::{Point, Scalar, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Weight of the spatial score in the combined score.
    pub alpha: f64,
    /// Normalizer of the temporal score.
    pub n_ti: f64,
    /// Crossings of the same AV pair closer than this form one region, meters.
    pub r_merge: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { alpha: 0.5, n_ti: 30.0, r_merge: 4.0 }
    }
}

impl FeedbackConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("feedback alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.n_ti > 0.0) {
            return Err(format!("feedback n_ti must be positive, got {}", self.n_ti));
        }
        if !(self.r_merge >= 0.0) {
            return Err(format!("feedback r_merge must be non-negative, got {}", self.r_merge));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("no AV trajectory has two distinct points")]
    DegenerateTrajectories,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub t: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictRegion {
    pub point: Point,
    pub involved: BTreeSet<AgentId>,
    pub arrivals: BTreeMap<AgentId, Arrival>,
    /// Trajectory segments whose crossings were merged into this region.
    pub sources: Vec<(AgentId, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackScore {
    pub spatial: f64,
    pub temporal: f64,
    pub combined: f64,
    pub regions: Vec<ConflictRegion>,
    /// Crossing count before merging.
    pub raw_count: usize,
}

/// `1 - raw / segments`, clamped to `[0, 1]`.
pub fn spatial_formula<T: Scalar>(raw: usize, segments: usize) -> T {
    let r = T::from_usize(raw).expect("count fits");
    let n = T::from_usize(segments).expect("count fits");
    (T::one() - r / n).max(T::zero()).min(T::one())
}

/// Smallest `|t_i - t_j| + v_i + v_j` over unordered pairs; infinite with
/// fewer than two arrivals.
pub fn region_score<T: Scalar>(arrivals: &[(T, T)]) -> T {
    let mut best = T::infinity();
    for (k, &(ti, vi)) in arrivals.iter().enumerate() {
        for &(tj, vj) in &arrivals[k + 1..] {
            best = best.min((ti - tj).abs() + (vi + vj));
        }
    }
    best
}

/// Normalized minimum region score; 1 when nothing competes.
pub fn temporal_formula<T: Scalar>(min_region: Option<T>, n_ti: T) -> T {
    match min_region {
        None => T::one(),
        Some(m) => (m / n_ti).max(T::zero()).min(T::one()),
    }
}

pub fn combine<T: Scalar>(alpha: T, spatial: T, temporal: T) -> T {
    alpha * spatial + (T::one() - alpha) * temporal
}

pub fn region_temporal_score(region: &ConflictRegion) -> f64 {
    let arr: Vec<(f64, f64)> = region.arrivals.values().map(|a| (a.t, a.v)).collect();
    region_score(&arr)
}

pub fn temporal_score(regions: &[ConflictRegion], n_ti: f64) -> f64 {
    let min = regions.iter().map(region_temporal_score).fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s))));
    temporal_formula(min, n_ti)
}

/// Sum of segment counts over polylines with at least two points.
pub fn segment_total(polylines: &[&[Point]]) -> usize {
    polylines.iter().map(|p| p.len().saturating_sub(1)).sum()
}

/// Spatial score of bare polylines, counting every proper crossing between
/// distinct polylines. Returns the score and the crossing count.
pub fn polyline_spatial_score(polylines: &[&[Point]]) -> Result<(f64, usize), FeedbackError> {
    let denom = segment_total(polylines);
    if denom == 0 {
        return Err(FeedbackError::DegenerateTrajectories);
    }
    let mut raw = 0;
    for (i, a) in polylines.iter().enumerate() {
        for b in &polylines[i + 1..] {
            raw += polyline_crossings(a, b).len();
        }
    }
    Ok((spatial_formula(raw, denom), raw))
}

/// Lane of a trajectory segment: nearest lane to its midpoint, aligned with
/// its heading. Computed on demand since only crossing segments need one.
struct SegmentLanes<'a> {
    graph: &'a LaneGraph,
    points: &'a [Point],
    cache: BTreeMap<usize, Option<LaneId>>,
}

impl<'a> SegmentLanes<'a> {
    fn new(graph: &'a LaneGraph, points: &'a [Point]) -> Self {
        Self { graph, points, cache: BTreeMap::new() }
    }

    fn get(&mut self, i: usize) -> Option<LaneId> {
        let (graph, points) = (self.graph, self.points);
        *self.cache.entry(i).or_insert_with(|| {
            let seg = Segment::new(points[i], points[i + 1]);
            graph.nearest_lane(seg.midpoint(), Some(seg.heading())).map(|h| h.lane)
        })
    }
}

/// Groups crossings whose points chain together within `radius`. Groups
/// keep the input order of their first member.
pub(crate) fn merge_crossings(crossings: &[Crossing<f64>], radius: f64) -> Vec<Vec<usize>> {
    let n = crossings.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if crossings[i].point.distance(crossings[j].point) < radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

fn nearest_sample(traj: &[TrajectorySample], p: Point) -> Arrival {
    let mut best = &traj[0];
    for s in traj {
        if s.p.distance_sq(p) < best.p.distance_sq(p) {
            best = s;
        }
    }
    Arrival { t: best.t, v: best.v }
}

struct AvPath {
    id: AgentId,
    samples: Vec<TrajectorySample>,
    points: Vec<Point>,
}

fn av_paths(obs: &Observation) -> Result<Vec<AvPath>, FeedbackError> {
    obs.av_ids()
        .into_iter()
        .map(|id| {
            let samples = av_trajectory(obs, id)?;
            let points = samples.iter().map(|s| s.p).collect();
            Ok(AvPath { id, samples, points })
        })
        .collect()
}

/// Crossings between AV trajectories on different lanes, merged per AV pair.
/// Returns the regions and the crossing count before merging.
fn regions_and_count(paths: &[AvPath], graph: &LaneGraph, cfg: &FeedbackConfig) -> (Vec<ConflictRegion>, usize) {
    let mut lanes: Vec<SegmentLanes> = paths.iter().map(|p| SegmentLanes::new(graph, &p.points)).collect();
    let mut regions = Vec::new();
    let mut raw = 0;
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            let kept: Vec<Crossing<f64>> = polyline_crossings(&paths[i].points, &paths[j].points)
                .into_iter()
                .filter(|c| lanes[i].get(c.ia) != lanes[j].get(c.ib))
                .collect();
            raw += kept.len();
            for group in merge_crossings(&kept, cfg.r_merge) {
                let members: Vec<&Crossing<f64>> = group.iter().map(|&k| &kept[k]).collect();
                // Crossings are sorted along AV i, so the first is the earliest.
                let point = members[0].point;
                let (a, b) = (&paths[i], &paths[j]);
                let mut sources: Vec<(AgentId, usize)> =
                    members.iter().flat_map(|c| [(a.id, c.ia), (b.id, c.ib)]).collect();
                sources.sort_unstable();
                sources.dedup();
                regions.push(ConflictRegion {
                    point,
                    involved: BTreeSet::from([a.id, b.id]),
                    arrivals: BTreeMap::from([
                        (a.id, nearest_sample(&a.samples, point)),
                        (b.id, nearest_sample(&b.samples, point)),
                    ]),
                    sources,
                });
            }
        }
    }
    (regions, raw)
}

/// Conflict regions between the AVs of an observation.
pub fn conflict_points(obs: &Observation, graph: &LaneGraph, cfg: &FeedbackConfig) -> Result<Vec<ConflictRegion>, FeedbackError> {
    let paths = av_paths(obs)?;
    Ok(regions_and_count(&paths, graph, cfg).0)
}

pub fn feedback(obs: &Observation, graph: &LaneGraph, cfg: &FeedbackConfig) -> Result<FeedbackScore, FeedbackError> {
    let paths = av_paths(obs)?;
    let denom = segment_total(&paths.iter().map(|p| p.points.as_slice()).collect::<Vec<_>>());
    if denom == 0 {
        return Err(FeedbackError::DegenerateTrajectories);
    }
    let (regions, raw_count) = regions_and_count(&paths, graph, cfg);
    let spatial = spatial_formula(raw_count, denom);
    let temporal = temporal_score(&regions, cfg.n_ti);
    Ok(FeedbackScore { spatial, temporal, combined: combine(cfg.alpha, spatial, temporal), regions, raw_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_network::{build_builtin_map, MapId};
    use crate::scenario::{AgentInfo, AgentKind, AgentState, Scene};
    use proptest::prelude::*;

    fn region(arr: &[(u32, f64, f64)]) -> ConflictRegion {
        ConflictRegion {
            point: Point::new(0.0, 0.0),
            involved: arr.iter().map(|a| AgentId(a.0)).collect(),
            arrivals: arr.iter().map(|&(id, t, v)| (AgentId(id), Arrival { t, v })).collect(),
            sources: vec![],
        }
    }

    #[test]
    fn spatial_formula_examples() {
        assert_eq!(spatial_formula::<f64>(0, 20), 1.0);
        assert_eq!(spatial_formula::<f64>(1, 20), 0.95);
        assert_eq!(spatial_formula::<f64>(1, 2), 0.5);
        assert_eq!(spatial_formula::<f64>(30, 20), 0.0);
        assert_eq!(spatial_formula::<f32>(1, 20), 0.95);
    }

    #[test]
    fn region_score_examples() {
        assert_eq!(region_temporal_score(&region(&[(1, 10.0, 0.0), (2, 10.0, 0.0)])), 0.0);
        assert_eq!(region_temporal_score(&region(&[(1, 10.0, 2.0), (2, 12.0, 3.0)])), 7.0);
        assert_eq!(region_temporal_score(&region(&[(1, 10.0, 0.0), (2, 11.0, 0.0), (3, 41.0, 0.0)])), 1.0);
    }

    #[test]
    fn temporal_examples() {
        assert_eq!(temporal_score(&[], 30.0), 1.0);
        let r = region(&[(1, 10.0, 2.0), (2, 12.0, 3.0)]);
        assert!((temporal_score(&[r], 30.0) - 7.0 / 30.0).abs() < 1e-15);
        let far = region(&[(1, 10.0, 20.0), (2, 15.0, 20.0)]);
        assert_eq!(temporal_score(&[far], 30.0), 1.0);
    }

    #[test]
    fn combined_examples() {
        let c: f64 = combine(0.5, 0.95, 7.0 / 30.0);
        assert!((c - 0.591_666_666_666_666_7).abs() < 1e-12);
        assert_eq!(combine(1.0, 0.3, 0.8), 0.3);
        assert_eq!(combine(0.0, 0.3, 0.8), 0.8);
    }

    fn observation(paths: &[Vec<(f64, f64)>]) -> Observation {
        let n = paths[0].len();
        let ids: Vec<AgentId> = (1..=paths.len() as u32).map(AgentId).collect();
        let scenes = (0..n)
            .map(|k| Scene {
                t: k as f64 * 0.1,
                agents: ids
                    .iter()
                    .zip(paths)
                    .map(|(&id, p)| {
                        let (x, y) = p[k];
                        (id, AgentState { p: Point::new(x, y), theta: 0.0, v: 5.0, a: 0.0 })
                    })
                    .collect(),
            })
            .collect();
        Observation {
            map_id: MapId::M1,
            dt: 0.1,
            agents: ids
                .iter()
                .map(|&id| AgentInfo { id, kind: AgentKind::Av, t_trigger: 0.0, p_dest: None })
                .collect(),
            scenes,
            collision_flag: false,
            collided_pair: None,
        }
    }

    #[test]
    fn parallel_lanes_do_not_conflict() {
        let g = build_builtin_map(MapId::M1);
        let north: Vec<(f64, f64)> = (0..40).map(|k| (1.75, -50.0 + k as f64)).collect();
        let south: Vec<(f64, f64)> = (0..40).map(|k| (-1.75, 50.0 - k as f64)).collect();
        let obs = observation(&[north, south]);
        let fb = feedback(&obs, &g, &FeedbackConfig::default()).unwrap();
        assert!(fb.regions.is_empty());
        assert_eq!(fb.spatial, 1.0);
        assert_eq!(fb.temporal, 1.0);
    }

    #[test]
    fn follower_on_same_lane_is_ignored() {
        let g = build_builtin_map(MapId::M1);
        // Same lane, with a small lateral wobble so the paths properly cross.
        let lead: Vec<(f64, f64)> = (0..40).map(|k| (1.75 + 0.2 * (k as f64).sin(), -40.0 + k as f64)).collect();
        let follow: Vec<(f64, f64)> = (0..40).map(|k| (1.75 - 0.2 * (k as f64).sin(), -45.0 + k as f64)).collect();
        assert!(!polyline_crossings(
            &lead.iter().map(|&(x, y)| Point::new(x, y)).collect::<Vec<_>>(),
            &follow.iter().map(|&(x, y)| Point::new(x, y)).collect::<Vec<_>>()
        )
        .is_empty());
        let obs = observation(&[lead, follow]);
        let fb = feedback(&obs, &g, &FeedbackConfig::default()).unwrap();
        assert!(fb.regions.is_empty());
        assert_eq!(fb.raw_count, 0);
    }

    #[test]
    fn crossing_paths_make_one_region() {
        let g = build_builtin_map(MapId::M1);
        let north: Vec<(f64, f64)> = (0..40).map(|k| (1.75, -20.0 + k as f64)).collect();
        let west: Vec<(f64, f64)> = (0..40).map(|k| (20.0 - 1.5 * k as f64, 1.75)).collect();
        let obs = observation(&[north, west]);
        let fb = feedback(&obs, &g, &FeedbackConfig::default()).unwrap();
        assert_eq!(fb.raw_count, 1);
        assert_eq!(fb.regions.len(), 1);
        let r = &fb.regions[0];
        assert!(r.point.distance(Point::new(1.75, 1.75)) < 1e-9);
        // North AV is nearest at y = 2 (k = 22); west AV at x = 2 (k = 12).
        assert!((r.arrivals[&AgentId(1)].t - 2.2).abs() < 1e-9);
        assert!((r.arrivals[&AgentId(2)].t - 1.2).abs() < 1e-9);
        assert!((fb.spatial - (1.0 - 1.0 / 78.0)).abs() < 1e-12);
        assert!((fb.temporal - 11.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_only_is_degenerate() {
        let g = build_builtin_map(MapId::M1);
        let still = vec![(1.75, -20.0); 5];
        let obs = observation(&[still.clone(), still]);
        assert_eq!(feedback(&obs, &g, &FeedbackConfig::default()), Err(FeedbackError::DegenerateTrajectories));
    }

    #[test]
    fn merge_is_single_linkage() {
        let c = |x: f64| Crossing { ia: 0, ib: 0, point: Point::new(x, 0.0) };
        let groups = merge_crossings(&[c(0.0), c(3.0), c(6.0), c(20.0)], 4.0);
        assert_eq!(groups, vec![vec![0, 1, 2], vec![3]]);
    }

    proptest! {
        #[test]
        fn region_score_is_order_free(arr in prop::collection::vec((0.0..60.0f64, 0.0..15.0f64), 2..6), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = arr.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(region_score(&arr), region_score(&shuffled));
            prop_assert!(region_score(&arr) >= 0.0);
        }

        #[test]
        fn scores_stay_in_unit_interval(
            raw in 0usize..500, denom in 1usize..400,
            m in prop::option::of(0.0..200.0f64), alpha in 0.0..=1.0f64,
        ) {
            let s: f64 = spatial_formula(raw, denom);
            let t = temporal_formula(m, 30.0);
            let c = combine(alpha, s, t);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&c));
        }
    }
}
