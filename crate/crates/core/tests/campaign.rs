use dlfuzz::fuzzer::{run_campaign, Budget, CampaignConfig, CampaignMode, IterationVerdict};
use dlfuzz::generation::Operator;
use dlfuzz::simulator::PolicyKind;

fn config(seed: u64, iterations: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig { seed, budget: Budget::Iterations(iterations), ..CampaignConfig::default() };
    cfg.sim.horizon = 60.0;
    cfg
}

#[test]
fn same_config_same_report() {
    let cfg = config(9, 40);
    let a = run_campaign(&cfg).unwrap();
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.iterations, 40);
    assert_eq!(a.log.len(), 40);
}

#[test]
fn conservative_policy_deadlocks() {
    let report = run_campaign(&config(0, 150)).unwrap();
    assert!(!report.dls.is_empty());
    let fails = report.log.iter().filter(|l| l.verdict == IterationVerdict::Fail).count();
    assert_eq!(report.dls.len(), fails);
    for l in &report.log {
        if l.verdict == IterationVerdict::Collision {
            assert!(!l.accepted && l.phi.is_none());
        }
    }
}

#[test]
fn tiebreak_policy_never_deadlocks() {
    let report = run_campaign(&CampaignConfig { policy: PolicyKind::PriorityTiebreak, ..config(0, 150) }).unwrap();
    assert!(report.dls.is_empty(), "{:?}", report.dls.iter().map(|d| &d.verdict.cycle).collect::<Vec<_>>());
}

#[test]
fn random_baseline_has_no_lineage() {
    let report = run_campaign(&CampaignConfig { mode: CampaignMode::RandomBaseline, ..config(4, 40) }).unwrap();
    assert!(report.corpus.is_empty());
    for l in &report.log {
        assert_eq!(l.lineage, None);
        assert_eq!(l.operator, Operator::Random);
        assert!(!l.accepted && l.phi.is_none());
    }
}

#[test]
fn wall_clock_budget_stops() {
    let cfg = CampaignConfig { budget: Budget::WallClockS(0.5), ..config(2, 0) };
    let report = run_campaign(&cfg).unwrap();
    assert_eq!(report.iterations as usize, report.log.len());
}
