//! Campaign loop: seed selection, mutation, simulation, judging and corpus
//! updates, plus a random-sampling baseline.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, info};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{feedback, ConflictRegion, FeedbackConfig, FeedbackScore};
use crate::generation::{generate, random_scenario, GenConfig, Generated, Operator, RouteCatalog};
use crate::oracle::{judge, OracleConfig, OracleMode, OracleVerdict, Outcome};
use crate::road_network::{build_builtin_map, LaneGraph, MapId};
use crate::scenario::Scenario;
use crate::simulator::{simulate, PolicyKind, SimConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    #[default]
    Stclocker,
    RandomBaseline,
}

impl FromStr for CampaignMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stclocker" => Ok(CampaignMode::Stclocker),
            "random_baseline" => Ok(CampaignMode::RandomBaseline),
            other => Err(format!("unknown mode {other:?} (expected stclocker or random_baseline)")),
        }
    }
}

impl fmt::Display for CampaignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CampaignMode::Stclocker => "stclocker",
            CampaignMode::RandomBaseline => "random_baseline",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    WallClockS(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub map: MapId,
    pub policy: PolicyKind,
    /// Initial corpus size.
    pub init_corpus: usize,
    pub budget: Budget,
    pub mode: CampaignMode,
    pub oracle: OracleMode,
    pub seed: u64,
    pub sim: SimConfig,
    pub oracle_config: OracleConfig,
    pub generation: GenConfig,
    pub feedback: FeedbackConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            map: MapId::M1,
            policy: PolicyKind::ConservativeYield,
            init_corpus: 8,
            budget: Budget::Iterations(150),
            mode: CampaignMode::Stclocker,
            oracle: OracleMode::Waitfor,
            seed: 0,
            sim: SimConfig::default(),
            oracle_config: OracleConfig::default(),
            generation: GenConfig::default(),
            feedback: FeedbackConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn check(&self) -> Result<(), CampaignError> {
        let bad = CampaignError::InvalidConfig;
        if self.init_corpus < 1 {
            return Err(bad("init_corpus must be at least 1".into()));
        }
        if let Budget::WallClockS(s) = self.budget {
            if !(s >= 0.0) {
                return Err(bad(format!("wall-clock budget must be non-negative, got {s}")));
            }
        }
        if self.map == MapId::Custom {
            return Err(bad("campaigns run on built-in maps only".into()));
        }
        self.sim.check().map_err(|e| bad(e.to_string()))?;
        self.oracle_config.check().map_err(bad)?;
        self.generation.check().map_err(bad)?;
        self.feedback.check().map_err(bad)?;
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    InvalidConfig(String),
    #[error("could not build {0} collision-free initial seeds")]
    InitExhausted(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: usize,
    pub scenario: Scenario,
    pub phi: f64,
    pub phi_spatial: f64,
    pub phi_temporal: f64,
    pub regions: Vec<ConflictRegion>,
    pub lineage: Option<usize>,
    /// Digest of the observation the scores were computed from.
    pub digest: String,
}

impl CorpusEntry {
    fn new(id: usize, scenario: Scenario, score: FeedbackScore, lineage: Option<usize>, digest: String) -> Self {
        Self {
            id,
            scenario,
            phi: score.combined,
            phi_spatial: score.spatial,
            phi_temporal: score.temporal,
            regions: score.regions,
            lineage,
            digest,
        }
    }
}

/// Wall-clock time spent in each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub mutation: Duration,
    pub simulation: Duration,
    pub oracle: Duration,
    pub feedback: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.mutation + self.simulation + self.oracle + self.feedback
    }

    pub fn add(&mut self, o: &StageTimes) {
        self.mutation += o.mutation;
        self.simulation += o.simulation;
        self.oracle += o.oracle;
        self.feedback += o.feedback;
    }

    /// Share of the total spent simulating; 0 when nothing was timed.
    pub fn simulation_share(&self) -> f64 {
        let total = self.total().as_secs_f64();
        if total > 0.0 {
            self.simulation.as_secs_f64() / total
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationVerdict {
    Pass,
    Fail,
    Collision,
    Error,
}

impl fmt::Display for IterationVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IterationVerdict::Pass => "pass",
            IterationVerdict::Fail => "fail",
            IterationVerdict::Collision => "collision",
            IterationVerdict::Error => "error",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub scenario_id: String,
    /// Corpus entry the scenario was derived from.
    pub lineage: Option<usize>,
    pub operator: Operator,
    pub verdict: IterationVerdict,
    pub phi_spatial: Option<f64>,
    pub phi_temporal: Option<f64>,
    pub phi: Option<f64>,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip)]
    pub times: StageTimes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadlockFinding {
    pub iteration: u64,
    pub scenario_id: String,
    pub scenario: Scenario,
    pub verdict: OracleVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub iterations: u64,
    pub dls: Vec<DeadlockFinding>,
    pub log: Vec<IterationLog>,
    pub discarded_collisions: u64,
    pub errors: u64,
    pub corpus: Vec<CorpusEntry>,
    #[serde(skip)]
    pub times: StageTimes,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        crate::scenario::to_json_pretty(self)
    }

    /// One line per iteration with stage timings in milliseconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,scenario_id,operator,verdict,phi_spatial,phi_temporal,phi,accepted,\
             wall_ms_sim,wall_ms_oracle,wall_ms_feedback,wall_ms_mutation\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let ms = |d: Duration| format!("{:.3}", d.as_secs_f64() * 1e3);
        for l in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                l.iteration,
                l.scenario_id,
                l.operator,
                l.verdict,
                opt(l.phi_spatial),
                opt(l.phi_temporal),
                opt(l.phi),
                l.accepted,
                ms(l.times.simulation),
                ms(l.times.oracle),
                ms(l.times.feedback),
                ms(l.times.mutation),
            );
        }
        out
    }
}

/// Samples an entry with weight `1 - phi + 0.05`.
pub fn select_seed<'a>(corpus: &'a [CorpusEntry], rng: &mut ChaCha8Rng) -> Result<&'a CorpusEntry, CampaignError> {
    if corpus.is_empty() {
        return Err(CampaignError::EmptyCorpus);
    }
    let weights = corpus.iter().map(|e| (1.0 - e.phi).clamp(0.0, 1.0) + 0.05);
    let dist = WeightedIndex::new(weights).expect("weights are positive");
    Ok(&corpus[dist.sample(rng)])
}

/// Everything a campaign needs that does not change between iterations.
struct Context<'a> {
    cfg: &'a CampaignConfig,
    graph: &'a LaneGraph,
    catalog: RouteCatalog,
    policy: Box<dyn crate::simulator::Policy>,
}

enum Executed {
    Collision,
    Judged { verdict: OracleVerdict, score: Option<FeedbackScore>, digest: String },
}

impl Context<'_> {
    /// Simulates, judges (unless `judge_it` is false) and scores one scenario.
    fn execute(&self, s: &Scenario, judge_it: bool, score_it: bool, times: &mut StageTimes) -> Result<Executed, String> {
        let t0 = Instant::now();
        let obs = simulate(s, self.graph, self.policy.as_ref(), &self.cfg.sim).map_err(|e| e.to_string())?;
        times.simulation += t0.elapsed();
        if obs.collision_flag {
            return Ok(Executed::Collision);
        }
        let verdict = if judge_it {
            let t0 = Instant::now();
            let v = judge(&obs, self.graph, self.cfg.oracle, &self.cfg.oracle_config).map_err(|e| e.to_string())?;
            times.oracle += t0.elapsed();
            v
        } else {
            OracleVerdict { outcome: Outcome::Pass, cycle: None, t_detect: None, graphs: vec![] }
        };
        let score = if score_it && verdict.outcome == Outcome::Pass {
            let t0 = Instant::now();
            let f = feedback(&obs, self.graph, &self.cfg.feedback).map_err(|e| e.to_string())?;
            times.feedback += t0.elapsed();
            Some(f)
        } else {
            None
        };
        Ok(Executed::Judged { verdict, score, digest: obs.digest() })
    }
}

/// Draws `init_corpus` collision-free random scenarios and scores them.
fn init_corpus(ctx: &Context, rng: &mut ChaCha8Rng, times: &mut StageTimes) -> Result<Vec<CorpusEntry>, CampaignError> {
    let k = ctx.cfg.init_corpus;
    let mut corpus = Vec::with_capacity(k);
    for _ in 0..50 * k {
        if corpus.len() == k {
            break;
        }
        let t0 = Instant::now();
        let Ok(s) = random_scenario(ctx.graph, &ctx.catalog, rng, &ctx.cfg.generation) else { continue };
        times.mutation += t0.elapsed();
        match ctx.execute(&s, false, true, times) {
            Ok(Executed::Judged { score: Some(score), digest, .. }) => {
                corpus.push(CorpusEntry::new(corpus.len(), s, score, None, digest));
            }
            Ok(_) => {}
            Err(e) => debug!("initial seed rejected: {e}"),
        }
    }
    if corpus.len() < k {
        return Err(CampaignError::InitExhausted(k));
    }
    Ok(corpus)
}

fn budget_left(budget: Budget, iteration: u64, started: Instant) -> bool {
    match budget {
        Budget::Iterations(n) => iteration < n,
        Budget::WallClockS(s) => started.elapsed().as_secs_f64() < s,
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    cfg.check()?;
    let graph = build_builtin_map(cfg.map);
    run_campaign_on(cfg, &graph)
}

/// Runs a campaign on an already built map.
pub fn run_campaign_on(cfg: &CampaignConfig, graph: &LaneGraph) -> Result<CampaignReport, CampaignError> {
    cfg.check()?;
    let started = Instant::now();
    let ctx = Context { cfg, graph, catalog: RouteCatalog::new(graph), policy: cfg.policy.policy() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = CampaignReport {
        config: cfg.clone(),
        iterations: 0,
        dls: vec![],
        log: vec![],
        discarded_collisions: 0,
        errors: 0,
        corpus: vec![],
        times: StageTimes::default(),
    };
    let mut corpus = match cfg.mode {
        CampaignMode::Stclocker => init_corpus(&ctx, &mut rng, &mut report.times)?,
        CampaignMode::RandomBaseline => vec![],
    };
    let mut iteration = 0;
    while budget_left(cfg.budget, iteration, started) {
        let mut times = StageTimes::default();
        let t0 = Instant::now();
        let (generated, parent) = match cfg.mode {
            CampaignMode::Stclocker => {
                let p = select_seed(&corpus, &mut rng)?;
                let g = generate(&p.scenario, p.phi, &p.regions, graph, &ctx.catalog, &mut rng, &cfg.generation);
                (g, Some((p.id, p.phi)))
            }
            CampaignMode::RandomBaseline => {
                match random_scenario(graph, &ctx.catalog, &mut rng, &cfg.generation) {
                    Ok(scenario) => (Generated { scenario, operator: Operator::Random }, None),
                    Err(e) => {
                        // Nothing was produced; still spend the iteration.
                        report.errors += 1;
                        debug!("iteration {iteration}: {e}");
                        iteration += 1;
                        continue;
                    }
                }
            }
        };
        times.mutation += t0.elapsed();
        let scenario_id = format!("it{iteration:05}");
        let mut log = IterationLog {
            iteration,
            scenario_id: scenario_id.clone(),
            lineage: parent.map(|p| p.0),
            operator: generated.operator,
            verdict: IterationVerdict::Error,
            phi_spatial: None,
            phi_temporal: None,
            phi: None,
            accepted: false,
            error: None,
            times: StageTimes::default(),
        };
        let score_it = cfg.mode == CampaignMode::Stclocker;
        match ctx.execute(&generated.scenario, true, score_it, &mut times) {
            Err(e) => {
                report.errors += 1;
                debug!("iteration {iteration}: {e}");
                log.error = Some(e);
            }
            Ok(Executed::Collision) => {
                report.discarded_collisions += 1;
                log.verdict = IterationVerdict::Collision;
            }
            Ok(Executed::Judged { verdict, score, digest }) => {
                if verdict.outcome == Outcome::Fail {
                    info!("iteration {iteration}: deadlock among {:?}", verdict.cycle.as_deref().unwrap_or_default());
                    log.verdict = IterationVerdict::Fail;
                    report.dls.push(DeadlockFinding {
                        iteration,
                        scenario_id,
                        scenario: generated.scenario,
                        verdict,
                    });
                } else {
                    log.verdict = IterationVerdict::Pass;
                    if let (Some(score), Some((pid, pphi))) = (score, parent) {
                        log.phi_spatial = Some(score.spatial);
                        log.phi_temporal = Some(score.temporal);
                        log.phi = Some(score.combined);
                        if score.combined < pphi {
                            log.accepted = true;
                            let id = corpus.len();
                            corpus.push(CorpusEntry::new(id, generated.scenario, score, Some(pid), digest));
                        }
                    }
                }
            }
        }
        log.times = times;
        report.times.add(&times);
        report.log.push(log);
        iteration += 1;
    }
    report.iterations = iteration;
    report.corpus = corpus;
    info!(
        "campaign done: {} iterations, {} deadlocks, {} collisions",
        report.iterations,
        report.dls.len(),
        report.discarded_collisions
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize, phi: f64) -> CorpusEntry {
        CorpusEntry {
            id,
            scenario: Scenario { map_id: MapId::M1, rng_seed: 0, avs: vec![], npcs: vec![] },
            phi,
            phi_spatial: phi,
            phi_temporal: phi,
            regions: vec![],
            lineage: None,
            digest: String::new(),
        }
    }

    #[test]
    fn empty_corpus_has_no_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_seed(&[], &mut rng), Err(CampaignError::EmptyCorpus));
        let one = [entry(7, 0.4)];
        assert_eq!(select_seed(&one, &mut rng).unwrap().id, 7);
    }

    #[test]
    fn selection_favours_low_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = [entry(0, 0.0), entry(1, 1.0)];
        let n = 100_000;
        let low = (0..n).filter(|_| select_seed(&c, &mut rng).unwrap().id == 0).count() as f64;
        let p = 1.05 / 1.10;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((low - n as f64 * p).abs() < 3.0 * sigma, "{low}");
    }

    #[test]
    fn zero_budget_is_empty() {
        let cfg = CampaignConfig { budget: Budget::Iterations(0), init_corpus: 1, ..CampaignConfig::default() };
        let r = run_campaign(&cfg).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.dls.is_empty());
        assert_eq!(r.corpus.len(), 1);
        assert!((0.0..=1.0).contains(&r.corpus[0].phi));
    }

    #[test]
    fn config_checks() {
        let bad = CampaignConfig { init_corpus: 0, ..CampaignConfig::default() };
        assert!(matches!(run_campaign(&bad), Err(CampaignError::InvalidConfig(_))));
        let text = r#"{"budget": {"wall_clock_s": 1.5}, "mode": "random_baseline"}"#;
        let cfg: CampaignConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.budget, Budget::WallClockS(1.5));
        assert_eq!(cfg.mode, CampaignMode::RandomBaseline);
        assert!(serde_json::from_str::<CampaignConfig>(r#"{"iters": 3}"#).is_err());
    }

    #[test]
    fn csv_has_one_line_per_iteration() {
        let cfg = CampaignConfig { budget: Budget::Iterations(3), init_corpus: 2, ..CampaignConfig::default() };
        let r = run_campaign(&cfg).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("iteration,scenario_id,operator,verdict,"));
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 12);
        }
    }
}
