use std::path::Path;

use clap::Args;
use dlfuzz::fuzzer::{Budget, CampaignConfig, CampaignMode};
use dlfuzz::oracle::OracleMode;
use dlfuzz::road_network::MapId;
use dlfuzz::simulator::PolicyKind;

use crate::CliError;

/// Flags shared by every command. Each one, when given, replaces the value
/// from `--config`, which in turn replaces the built-in default.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON file mirroring the campaign configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// m1, m2, m3 or m4.
    #[arg(long)]
    pub map: Option<MapId>,
    /// conservative_yield or priority_tiebreak.
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    /// stclocker or random_baseline.
    #[arg(long)]
    pub mode: Option<CampaignMode>,
    /// waitfor or naive_timer.
    #[arg(long)]
    pub oracle: Option<OracleMode>,
    /// Iteration budget; replaces any wall-clock budget.
    #[arg(long)]
    pub iterations: Option<u64>,
}

pub fn read_config(path: &Path) -> Result<CampaignConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl Overrides {
    pub fn resolve(&self) -> Result<CampaignConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => CampaignConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.map {
            cfg.map = v;
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.oracle {
            cfg.oracle = v;
        }
        if let Some(v) = self.iterations {
            cfg.budget = Budget::Iterations(v);
        }
        cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
