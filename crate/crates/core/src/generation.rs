//! Scenario mutation: trigger-time synchronization, AV replacement guided by
//! an offline crossing estimate, and NPC waypoint jitter.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{spatial_formula, ConflictRegion};
use crate::geometry::polyline_crossings;
use crate::road_network::{plan_route, LaneGraph, Route, RouteError};
use crate::scenario::{validate, AgentId, AvSpec, NpcSpec, Scenario, Waypoint, MAX_SPEED, MIN_SPAWN_SEPARATION};
use crate::Point;

/// Which mutation operators are enabled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    #[default]
    Full,
    SpatialOnly,
    TemporalOnly,
}

impl FromStr for MutationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(MutationMode::Full),
            "spatial_only" => Ok(MutationMode::SpatialOnly),
            "temporal_only" => Ok(MutationMode::TemporalOnly),
            other => Err(format!("unknown mutation mode {other:?} (expected full, spatial_only or temporal_only)")),
        }
    }
}

impl fmt::Display for MutationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationMode::Full => "full",
            MutationMode::SpatialOnly => "spatial_only",
            MutationMode::TemporalOnly => "temporal_only",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub max_avs: usize,
    /// Extra candidates scored by the local search.
    pub n_local: usize,
    pub trigger_max: f64,
    /// Largest positional perturbation of an NPC waypoint, meters.
    pub jitter_pos: f64,
    /// Largest speed perturbation of an NPC waypoint, m/s.
    pub jitter_speed: f64,
    /// NPC waypoints are left alone this close to a conflict region, meters.
    pub region_radius: f64,
    /// Largest NPC count in freshly drawn scenarios.
    pub max_npcs: usize,
    pub mode: MutationMode,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            max_avs: 6,
            n_local: 20,
            trigger_max: 30.0,
            jitter_pos: 2.0,
            jitter_speed: 2.0,
            region_radius: 10.0,
            max_npcs: 3,
            mode: MutationMode::Full,
        }
    }
}

impl GenConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.max_avs < 3 {
            return Err(format!("generation max_avs must be at least 3, got {}", self.max_avs));
        }
        if self.n_local < 1 {
            return Err("generation n_local must be at least 1".into());
        }
        if !(self.trigger_max >= 0.0) || !(self.jitter_pos >= 0.0) || !(self.jitter_speed >= 0.0) {
            return Err("generation bounds must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Temporal,
    Spatial,
    /// Mutation failed; the parent was kept with a new seed.
    Reseed,
    /// Freshly drawn, not derived from a parent.
    Random,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Temporal => "temporal",
            Operator::Spatial => "spatial",
            Operator::Reseed => "reseed",
            Operator::Random => "random",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("no routable candidate AV found")]
    NoFeasibleCandidate,
    #[error(transparent)]
    NoRoute(#[from] RouteError),
    #[error("could not draw a valid scenario")]
    Exhausted,
}

/// Spawn points, destinations and the routes between them, planned once
/// per map.
#[derive(Clone, Debug)]
pub struct RouteCatalog {
    spawns: Vec<Point>,
    dests: Vec<Point>,
    /// Reachable destination indices per spawn.
    reachable: Vec<Vec<usize>>,
    routes: BTreeMap<(usize, usize), Route>,
}

const SAME_POINT: f64 = 1e-9;

impl RouteCatalog {
    pub fn new(graph: &LaneGraph) -> Self {
        let spawns: Vec<Point> = graph.spawn_points().iter().map(|s| s.position).collect();
        let dests = graph.destination_points();
        let mut reachable = vec![Vec::new(); spawns.len()];
        let mut routes = BTreeMap::new();
        for (i, &s) in spawns.iter().enumerate() {
            for (j, &d) in dests.iter().enumerate() {
                if s.distance(d) <= SAME_POINT {
                    continue;
                }
                if let Ok(r) = plan_route(graph, s, d) {
                    reachable[i].push(j);
                    routes.insert((i, j), r);
                }
            }
        }
        Self { spawns, dests, reachable, routes }
    }

    pub fn spawns(&self) -> &[Point] {
        &self.spawns
    }

    pub fn destinations_from(&self, spawn: usize) -> impl Iterator<Item = Point> + '_ {
        self.reachable[spawn].iter().map(|&j| self.dests[j])
    }

    fn index_of(points: &[Point], p: Point) -> Option<usize> {
        points.iter().position(|q| q.distance(p) <= SAME_POINT)
    }

    /// Cached route when both ends are catalog points, planned otherwise.
    pub fn route(&self, graph: &LaneGraph, start: Point, dest: Point) -> Result<Cow<'_, Route>, RouteError> {
        let cached = Self::index_of(&self.spawns, start)
            .zip(Self::index_of(&self.dests, dest))
            .and_then(|key| self.routes.get(&key));
        match cached {
            Some(r) => Ok(Cow::Borrowed(r)),
            None => plan_route(graph, start, dest).map(Cow::Owned),
        }
    }
}

/// Moves trigger times of one region's AVs so they reach it together.
/// `None` when there is no region to work on.
pub fn temporal_mutation<R: Rng>(avs: &[AvSpec], regions: &[ConflictRegion], rng: &mut R, trigger_max: f64) -> Option<Vec<AvSpec>> {
    let region = regions.choose(rng)?;
    let ids: Vec<AgentId> = region.involved.iter().copied().collect();
    let mut pairs: Vec<(AgentId, AgentId)> =
        ids.iter().enumerate().flat_map(|(k, &a)| ids[k + 1..].iter().map(move |&b| (a, b))).collect();
    pairs.shuffle(rng);
    let original: BTreeMap<AgentId, f64> = avs.iter().map(|a| (a.id, a.t_trigger)).collect();
    let mut out = avs.to_vec();
    for (i, j) in pairs {
        let (Some(&ti), Some(&tj), Some(ai), Some(aj)) =
            (original.get(&i), original.get(&j), region.arrivals.get(&i), region.arrivals.get(&j))
        else {
            continue;
        };
        let (ni, nj) = synchronize(ti, tj, ai.t, aj.t);
        for av in out.iter_mut() {
            if av.id == i {
                av.t_trigger = ni.clamp(0.0, trigger_max);
            } else if av.id == j {
                av.t_trigger = nj.clamp(0.0, trigger_max);
            }
        }
    }
    Some(out)
}

/// New trigger times for a pair arriving at `arr_i` and `arr_j`.
pub fn synchronize(trig_i: f64, trig_j: f64, arr_i: f64, arr_j: f64) -> (f64, f64) {
    let d = arr_i - arr_j;
    ((trig_i - d / 2.0).max(0.0), (trig_j + d / 2.0).max(0.0))
}

/// Route polylines with the lane of every segment.
struct LabeledRoute<'a> {
    route: Cow<'a, Route>,
}

impl LabeledRoute<'_> {
    fn segments(&self) -> usize {
        self.route.points.len().saturating_sub(1)
    }
}

fn labeled_crossings(a: &LabeledRoute, b: &LabeledRoute) -> usize {
    polyline_crossings(&a.route.points, &b.route.points)
        .iter()
        .filter(|c| a.route.segment_lane(c.ia) != b.route.segment_lane(c.ib))
        .count()
}

fn plan_all<'a>(graph: &LaneGraph, catalog: &'a RouteCatalog, avs: &[AvSpec]) -> Result<Vec<LabeledRoute<'a>>, RouteError> {
    avs.iter().map(|a| catalog.route(graph, a.p_start, a.p_dest).map(|route| LabeledRoute { route })).collect()
}

fn pairwise_crossings(routes: &[LabeledRoute]) -> usize {
    let mut n = 0;
    for (i, a) in routes.iter().enumerate() {
        for b in &routes[i + 1..] {
            n += labeled_crossings(a, b);
        }
    }
    n
}

/// Spatial score of the planned routes, without simulating.
pub fn estimate_spatial_score_offline(graph: &LaneGraph, catalog: &RouteCatalog, avs: &[AvSpec]) -> Result<f64, GenError> {
    let routes = plan_all(graph, catalog, avs)?;
    let denom: usize = routes.iter().map(LabeledRoute::segments).sum();
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(spatial_formula(pairwise_crossings(&routes), denom))
}

fn start_points(avs: &[AvSpec], npcs: &[NpcSpec]) -> Vec<Point> {
    avs.iter().map(|a| a.p_start).chain(npcs.iter().filter_map(|n| n.waypoints.first().map(|w| w.p))).collect()
}

/// Spawn indices at least the minimum separation away from `taken`.
fn free_spawns(catalog: &RouteCatalog, taken: &[Point]) -> Vec<usize> {
    (0..catalog.spawns.len())
        .filter(|&i| !catalog.reachable[i].is_empty())
        .filter(|&i| taken.iter().all(|p| p.distance(catalog.spawns[i]) >= MIN_SPAWN_SEPARATION))
        .collect()
}

fn draw_av<R: Rng>(catalog: &RouteCatalog, taken: &[Point], id: AgentId, trigger_max: f64, rng: &mut R) -> Option<AvSpec> {
    let free = free_spawns(catalog, taken);
    let &s = free.choose(rng)?;
    let &d = catalog.reachable[s].choose(rng)?;
    Some(AvSpec { id, p_start: catalog.spawns[s], p_dest: catalog.dests[d], t_trigger: rng.gen_range(0.0..=trigger_max) })
}

/// Drops a random subset when at capacity, then appends the candidate AV
/// with the lowest offline spatial score out of `n_local + 1` draws, and
/// jitters the NPCs.
#[allow(clippy::too_many_arguments)]
pub fn spatial_mutation<R: Rng>(
    avs: &[AvSpec],
    npcs: &[NpcSpec],
    graph: &LaneGraph,
    catalog: &RouteCatalog,
    regions: &[ConflictRegion],
    rng: &mut R,
    cfg: &GenConfig,
) -> Result<(Vec<AvSpec>, Vec<NpcSpec>), GenError> {
    let mut kept = avs.to_vec();
    if kept.len() >= cfg.max_avs {
        let n = rng.gen_range(1..=cfg.max_avs - 2);
        let mut drop = index::sample(rng, kept.len(), n).into_vec();
        drop.sort_unstable();
        for i in drop.into_iter().rev() {
            kept.remove(i);
        }
    }
    let next_id = AgentId(
        avs.iter().map(|a| a.id.0).chain(npcs.iter().map(|n| n.id.0)).max().map_or(1, |m| m + 1),
    );
    let (best, _) = local_search(&kept, npcs, graph, catalog, next_id, rng, cfg)?;
    if kept.len() < cfg.max_avs {
        kept.push(best);
    }
    let npcs = waypoint_mutator(npcs, regions, graph, rng, cfg);
    Ok((kept, npcs))
}

/// Best candidate out of `n_local + 1` routable draws and its score. Ties
/// go to the earlier draw.
pub fn local_search<R: Rng>(
    base: &[AvSpec],
    npcs: &[NpcSpec],
    graph: &LaneGraph,
    catalog: &RouteCatalog,
    id: AgentId,
    rng: &mut R,
    cfg: &GenConfig,
) -> Result<(AvSpec, f64), GenError> {
    let mut best: Option<(AvSpec, f64)> = None;
    for (cand, score) in scored_candidates(base, npcs, graph, catalog, id, rng, cfg)? {
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            best = Some((cand, score));
        }
    }
    best.ok_or(GenError::NoFeasibleCandidate)
}

/// Up to `n_local + 1` routable candidates with their offline scores,
/// giving up after `5 * n_local` draws.
fn scored_candidates<R: Rng>(
    base: &[AvSpec],
    npcs: &[NpcSpec],
    graph: &LaneGraph,
    catalog: &RouteCatalog,
    id: AgentId,
    rng: &mut R,
    cfg: &GenConfig,
) -> Result<Vec<(AvSpec, f64)>, GenError> {
    let routes = plan_all(graph, catalog, base)?;
    let base_crossings = pairwise_crossings(&routes);
    let base_segments: usize = routes.iter().map(LabeledRoute::segments).sum();
    let taken = start_points(base, npcs);
    let mut out = Vec::new();
    for _ in 0..5 * cfg.n_local {
        if out.len() > cfg.n_local {
            break;
        }
        let Some(cand) = draw_av(catalog, &taken, id, cfg.trigger_max, rng) else { continue };
        let Ok(route) = catalog.route(graph, cand.p_start, cand.p_dest) else { continue };
        let lr = LabeledRoute { route };
        let raw = base_crossings + routes.iter().map(|r| labeled_crossings(r, &lr)).sum::<usize>();
        let score: f64 = spatial_formula(raw, base_segments + lr.segments());
        out.push((cand, score));
    }
    Ok(out)
}

/// Uniform point in a disk of radius `r`.
fn disk<R: Rng>(rng: &mut R, r: f64) -> Point {
    let rho = r * rng.gen::<f64>().sqrt();
    let phi = rng.gen::<f64>() * TAU;
    Point::new(rho * phi.cos(), rho * phi.sin())
}

/// Jitters NPC waypoints along their lanes, leaving conflict regions alone.
pub fn waypoint_mutator<R: Rng>(
    npcs: &[NpcSpec],
    regions: &[ConflictRegion],
    graph: &LaneGraph,
    rng: &mut R,
    cfg: &GenConfig,
) -> Vec<NpcSpec> {
    let near_region = |p: Point| regions.iter().any(|r| r.point.distance(p) <= cfg.region_radius);
    npcs.iter()
        .map(|npc| {
            if !npc.waypoints.is_empty() && npc.waypoints.iter().all(|w| near_region(w.p)) {
                return npc.clone();
            }
            let waypoints = npc
                .waypoints
                .iter()
                .map(|w| {
                    let offset = disk(rng, cfg.jitter_pos);
                    let dv = rng.gen_range(-cfg.jitter_speed..=cfg.jitter_speed);
                    let Some(lane) = graph.nearest_lane(w.p, Some(w.theta)).and_then(|h| graph.lane(h.lane)) else {
                        return *w;
                    };
                    let (p, theta) = lane.sample(lane.project(w.p + offset).arc);
                    let v = (w.v + dv).clamp(0.0, lane.speed_limit.min(MAX_SPEED));
                    if near_region(p) {
                        *w
                    } else {
                        Waypoint { p, theta, v }
                    }
                })
                .collect();
            NpcSpec { id: npc.id, waypoints }
        })
        .collect()
}

/// Waypoint spacing of freshly drawn NPCs, meters.
const NPC_WAYPOINT_SPACING: f64 = 5.0;

fn npc_from_route<R: Rng>(graph: &LaneGraph, route: &Route, id: AgentId, rng: &mut R) -> NpcSpec {
    let step = NPC_WAYPOINT_SPACING as usize;
    let last = route.points.len() - 1;
    let mut idx: Vec<usize> = (0..last).step_by(step).collect();
    idx.push(last);
    let waypoints = idx
        .into_iter()
        .map(|i| {
            let p = route.points[i];
            let j = i.min(last - 1);
            let theta = (route.points[j + 1] - route.points[j]).heading();
            let limit = graph.lane(route.point_lanes[i]).map_or(10.0, |l| l.speed_limit).min(MAX_SPEED);
            Waypoint { p, theta, v: limit * rng.gen_range(0.6..=1.0) }
        })
        .collect();
    NpcSpec { id, waypoints }
}

/// A fresh random scenario: 2 to `max_avs` AVs and up to `max_npcs` NPCs on
/// free spawn points.
pub fn random_scenario<R: Rng>(graph: &LaneGraph, catalog: &RouteCatalog, rng: &mut R, cfg: &GenConfig) -> Result<Scenario, GenError> {
    for _ in 0..50 {
        let n_av = rng.gen_range(2..=cfg.max_avs);
        let n_npc = rng.gen_range(0..=cfg.max_npcs);
        let mut avs: Vec<AvSpec> = Vec::new();
        let mut taken = Vec::new();
        for k in 0..n_av {
            let Some(av) = draw_av(catalog, &taken, AgentId(k as u32 + 1), cfg.trigger_max, rng) else { break };
            taken.push(av.p_start);
            avs.push(av);
        }
        let mut npcs = Vec::new();
        for _ in 0..n_npc {
            let id = AgentId((avs.len() + npcs.len()) as u32 + 1);
            let Some(spec) = draw_av(catalog, &taken, id, 0.0, rng) else { break };
            let Ok(route) = catalog.route(graph, spec.p_start, spec.p_dest) else { continue };
            if route.points.len() < 2 {
                continue;
            }
            taken.push(spec.p_start);
            npcs.push(npc_from_route(graph, &route, id, rng));
        }
        let s = Scenario { map_id: graph.map_id(), rng_seed: rng.gen(), avs, npcs };
        if validate(&s, graph, cfg.max_avs).is_empty() {
            return Ok(s);
        }
    }
    Err(GenError::Exhausted)
}

/// Mutation outcome with the operator that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub scenario: Scenario,
    pub operator: Operator,
}

const MAX_REDRAWS: usize = 10;

/// Derives a child scenario from `parent`, given its combined score `phi`
/// and conflict regions.
pub fn generate<R: Rng>(
    parent: &Scenario,
    phi: f64,
    regions: &[ConflictRegion],
    graph: &LaneGraph,
    catalog: &RouteCatalog,
    rng: &mut R,
    cfg: &GenConfig,
) -> Generated {
    let temporal = match cfg.mode {
        MutationMode::SpatialOnly => None,
        _ => temporal_mutation(&parent.avs, regions, rng, cfg.trigger_max),
    };
    let spatial = match (cfg.mode, &temporal) {
        (MutationMode::SpatialOnly, _) => true,
        (MutationMode::TemporalOnly, _) => false,
        (MutationMode::Full, None) => true,
        (MutationMode::Full, Some(_)) => rng.gen::<f64>() < phi,
    };
    let valid = |s: &Scenario| validate(s, graph, cfg.max_avs).is_empty();
    if !spatial {
        if let Some(avs) = temporal {
            let s = Scenario { avs, rng_seed: rng.gen(), ..parent.clone() };
            if valid(&s) {
                return Generated { scenario: s, operator: Operator::Temporal };
            }
        }
    } else {
        for _ in 0..MAX_REDRAWS {
            let Ok((avs, npcs)) = spatial_mutation(&parent.avs, &parent.npcs, graph, catalog, regions, rng, cfg) else {
                continue;
            };
            let s = Scenario { map_id: parent.map_id, rng_seed: rng.gen(), avs, npcs };
            if valid(&s) {
                return Generated { scenario: s, operator: Operator::Spatial };
            }
        }
    }
    Generated { scenario: Scenario { rng_seed: rng.gen(), ..parent.clone() }, operator: Operator::Reseed }
}
