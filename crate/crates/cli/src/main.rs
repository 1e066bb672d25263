mod config;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlfuzz::feedback::{conflict_points, feedback};
use dlfuzz::fuzzer::run_campaign;
use dlfuzz::oracle::{judge, OracleError};
use dlfuzz::road_network::{build_builtin_map, LaneGraph, MapId};
use dlfuzz::scenario::{to_json_pretty, Observation, Scenario};
use dlfuzz::simulator::simulate;
use log::info;
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::config::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files.
    #[error("{0}")]
    Usage(String),
    /// Inputs that parse but cannot be processed.
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dlfuzz", version, about = "Search for multi-vehicle deadlock scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a campaign and write report.json, iterations.csv and dls/*.json.
    Fuzz {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Simulate and judge one scenario file.
    Replay {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write observation.json and verdict.json here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Render the run as SVG (into --out, or next to the scenario).
        #[arg(long)]
        svg: bool,
    },
    /// Print the feedback score of a recorded observation.
    Score {
        observation: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the oracle verdict of a recorded observation.
    Oracle {
        observation: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn graph_for(map: MapId) -> Result<LaneGraph, CliError> {
    if map == MapId::Custom {
        return Err(CliError::Data("custom maps cannot be rebuilt from an id".into()));
    }
    Ok(build_builtin_map(map))
}

fn oracle_error(e: OracleError) -> CliError {
    CliError::Data(e.to_string())
}

fn fuzz(overrides: &Overrides, out: &Path) -> Result<(), CliError> {
    let cfg = overrides.resolve()?;
    fs::create_dir_all(out.join("dls"))?;
    let marker = out.join(".partial");
    fs::write(&marker, "")?;
    info!("campaign seed {} on {:?}, writing to {}", cfg.seed, cfg.map, out.display());
    let report = run_campaign(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(out.join("report.json"), report.to_json())?;
    fs::write(out.join("iterations.csv"), report.to_csv())?;
    for d in &report.dls {
        fs::write(out.join("dls").join(format!("{}.json", d.scenario_id)), to_json_pretty(&d.scenario))?;
    }
    fs::remove_file(marker)?;
    println!("{} iterations, {} deadlock scenarios, {} collisions discarded", report.iterations, report.dls.len(), report.discarded_collisions);
    Ok(())
}

fn replay(path: &Path, overrides: &Overrides, out: Option<&Path>, svg: bool) -> Result<(), CliError> {
    let cfg = overrides.resolve()?;
    let scenario: Scenario = read_json(path)?;
    let graph = graph_for(scenario.map_id)?;
    let obs = simulate(&scenario, &graph, cfg.policy.policy().as_ref(), &cfg.sim).map_err(|e| CliError::Data(e.to_string()))?;
    let verdict = match judge(&obs, &graph, cfg.oracle, &cfg.oracle_config) {
        Ok(v) => Some(v),
        Err(OracleError::CollidedObservation) => None,
        Err(e) => return Err(oracle_error(e)),
    };
    match &verdict {
        Some(v) => println!("{}", serde_json::to_string(v).expect("verdicts serialize")),
        None => println!("{}", serde_json::json!({ "collision": obs.collided_pair })),
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("observation.json"), to_json_pretty(&obs))?;
        if let Some(v) = &verdict {
            fs::write(dir.join("verdict.json"), to_json_pretty(v))?;
        }
    }
    if svg {
        let regions = if obs.collision_flag { Vec::new() } else { conflict_points(&obs, &graph, &cfg.feedback).unwrap_or_default() };
        let target = match out {
            Some(dir) => dir.join(path.with_extension("svg").file_name().unwrap_or("replay.svg".as_ref())),
            None => path.with_extension("svg"),
        };
        fs::write(&target, svg::render(&graph, &obs, &regions, verdict.as_ref()))?;
        info!("wrote {}", target.display());
    }
    Ok(())
}

fn score(path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = overrides.resolve()?;
    let obs: Observation = read_json(path)?;
    let graph = graph_for(obs.map_id)?;
    let s = feedback(&obs, &graph, &cfg.feedback).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{}", to_json_pretty(&s));
    Ok(())
}

fn oracle(path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = overrides.resolve()?;
    let obs: Observation = read_json(path)?;
    let graph = graph_for(obs.map_id)?;
    let v = judge(&obs, &graph, cfg.oracle, &cfg.oracle_config).map_err(oracle_error)?;
    println!("{}", to_json_pretty(&v));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DLFUZZ_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fuzz { overrides, out } => fuzz(overrides, out),
        Command::Replay { scenario, overrides, out, svg } => replay(scenario, overrides, out.as_deref(), *svg),
        Command::Score { observation, overrides } => score(observation, overrides),
        Command::Oracle { observation, overrides } => oracle(observation, overrides),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
