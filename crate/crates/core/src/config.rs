//! JSON experiment configuration: one config file = one experiment run.

use crate::coeff::FieldSpec;
use crate::{Error, Result};
use std::path::Path;

fn default_mu() -> f64 {
    1.0 / 3.0
}
fn default_lip() -> f64 {
    7.0
}
fn default_cell_n() -> usize {
    256
}
fn default_tol() -> f64 {
    1e-10
}
fn default_cfl() -> f64 {
    0.5
}
fn default_nodes_per_eps() -> usize {
    8
}
fn default_min_nodes() -> usize {
    64
}
fn default_c0() -> f64 {
    1.0
}
fn default_trials() -> usize {
    8
}
fn default_seed() -> u64 {
    1
}
fn default_modes() -> usize {
    16
}
fn default_lengths() -> Vec<f64> {
    vec![1.0]
}

/// What medium and domain an experiment runs on.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scenario {
    pub field: FieldSpec,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_lip")]
    pub lipschitz: f64,
    /// domain extents per axis; length 1 or 2
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Cell,
    Correctors,
    Rate,
    L2rate,
    Observe,
    Traces,
    Control,
    Rellich,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub scenario: Scenario,
    /// oscillation scales; ignored by cell-only commands
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// cell-grid resolution per axis
    #[serde(default = "default_cell_n")]
    pub cell_resolution: usize,
    /// domain grid rule: elements per epsilon (h = eps / nodes_per_eps)
    #[serde(default = "default_nodes_per_eps")]
    pub nodes_per_eps: usize,
    #[serde(default = "default_min_nodes")]
    pub min_nodes: usize,
    /// final time; defaults to 4 * r0 when absent
    #[serde(default)]
    pub time_horizon: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// frequency-threshold constant C0
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// number of modes for spectral/control commands
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.scenario.lengths.len();
        if d != 1 && d != 2 {
            return Err(Error::Config("scenario.lengths must have 1 or 2 entries".into()));
        }
        if self.scenario.lengths.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("domain extents must be positive".into()));
        }
        if self.scenario.mu <= 0.0 || self.scenario.mu > 1.0 {
            return Err(Error::Config("mu must lie in (0, 1]".into()));
        }
        if self.epsilons.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("epsilons must be positive".into()));
        }
        if self.nodes_per_eps < 8 {
            return Err(Error::Config(
                "nodes_per_eps must be at least 8 so that h <= eps/8".into(),
            ));
        }
        if self.cfl <= 0.0 || self.cfl > 1.0 {
            return Err(Error::Config("cfl must lie in (0, 1]".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.cell_resolution < 8 {
            return Err(Error::Config("cell_resolution must be at least 8".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> crate::fem::Domain {
        if self.scenario.lengths.len() == 1 {
            crate::fem::Domain::interval(self.scenario.lengths[0])
        } else {
            crate::fem::Domain::rectangle(self.scenario.lengths[0], self.scenario.lengths[1])
        }
    }

    /// Elements per axis for a given epsilon: h = min(eps/nodes_per_eps,
    /// length/min_nodes), rounded up to keep h below both.
    pub fn grid_elements(&self, eps: f64) -> Vec<usize> {
        self.scenario
            .lengths
            .iter()
            .map(|&l| {
                let from_eps = (l * self.nodes_per_eps as f64 / eps).ceil() as usize;
                from_eps.max(self.min_nodes)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_config() {
        let json = r#"{
            "command": "cell",
            "scenario": { "field": { "kind": "preset", "name": "cosine-1d" } }
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.command, Command::Cell);
        assert_eq!(cfg.cell_resolution, 256);
        assert_eq!(cfg.seed, 1);
    }

    #[test]
    fn grid_rule_resolves_epsilon() {
        let json = r#"{
            "command": "rate",
            "scenario": { "field": { "kind": "preset", "name": "cosine-1d" } },
            "epsilons": [0.125, 0.0625]
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let n = cfg.grid_elements(0.125);
        assert!(1.0 / n[0] as f64 <= 0.125 / 8.0 + 1e-12);
    }

    #[test]
    fn invalid_mu_rejected() {
        let json = r#"{
            "command": "cell",
            "scenario": { "field": { "kind": "preset", "name": "cosine-1d" }, "mu": -1.0 }
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.validate().is_err());
    }
}
