mod common;

use dlfuzz::feedback::{conflict_points, feedback, FeedbackConfig};
use dlfuzz::road_network::{build_builtin_map, MapId};
use dlfuzz::scenario::{AgentId, Scenario};
use dlfuzz::simulator::{simulate, PolicyKind};

/// AV 1 drives straight north; AV 2 comes down from the north ten seconds
/// later and turns left toward the east exit, crossing AV 1's path once.
fn straight_and_left_turn() -> Scenario {
    Scenario {
        map_id: MapId::M1,
        rng_seed: 3,
        avs: vec![
            common::av(1, (1.75, -55.0), (1.75, 60.0), 0.0),
            common::av(2, (-1.75, 55.0), (60.0, -1.75), 10.0),
        ],
        npcs: vec![],
    }
}

#[test]
fn left_turn_crosses_once() {
    let graph = build_builtin_map(MapId::M1);
    let obs = simulate(&straight_and_left_turn(), &graph, PolicyKind::ConservativeYield.policy().as_ref(), &common::sim_config())
        .unwrap();
    assert!(obs.collided_pair.is_none());
    let regions = conflict_points(&obs, &graph, &FeedbackConfig::default()).unwrap();
    assert_eq!(regions.len(), 1, "{regions:?}");
    let r = &regions[0];
    assert_eq!(r.involved.iter().copied().collect::<Vec<_>>(), [AgentId(1), AgentId(2)]);
    assert!(r.point.x.abs() < 7.0 && r.point.y.abs() < 7.0, "outside the junction: {:?}", r.point);
    // AV 1 clears the box long before AV 2 is released.
    assert!(r.arrivals[&AgentId(1)].t < r.arrivals[&AgentId(2)].t);

    let score = feedback(&obs, &graph, &FeedbackConfig::default()).unwrap();
    assert_eq!(score.raw_count, 1);
    assert!(score.spatial < 1.0 && score.temporal < 1.0);
    assert!((score.combined - (0.5 * score.spatial + 0.5 * score.temporal)).abs() < 1e-12);
}

#[test]
fn opposite_straights_score_one() {
    let graph = build_builtin_map(MapId::M1);
    let mut s = straight_and_left_turn();
    s.avs[1] = common::av(2, (-1.75, 55.0), (-1.75, -60.0), 0.0);
    let obs = simulate(&s, &graph, PolicyKind::ConservativeYield.policy().as_ref(), &common::sim_config()).unwrap();
    let score = feedback(&obs, &graph, &FeedbackConfig::default()).unwrap();
    assert_eq!((score.spatial, score.temporal, score.combined), (1.0, 1.0, 1.0));
    assert!(score.regions.is_empty());
}
