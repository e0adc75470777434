//! Flat `key = value` run configuration and system assembly.

use std::path::{Path, PathBuf};

use ptequil_core::admm::AdmmConfig;
use ptequil_core::network::CoupledSystem;
use ptequil_core::scenario::{sample_uniform, ScenarioSet};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, IoError};
use crate::matpower::read_power_case;
use crate::tables::{apply_sites, check_coupling, couplings, destinations, read_coupling, read_scenarios, read_sites};
use crate::tntp::{build_transport, read_net, read_trips, DemandOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: PathBuf,
    pub trips: PathBuf,
    pub power_case: PathBuf,
    pub coupling: PathBuf,
    pub sites: Option<PathBuf>,
    /// Scenario CSV; when absent, scenarios are sampled with `seed`.
    pub scenarios: Option<PathBuf>,
    pub scenario_count: usize,
    pub scenario_low: f64,
    pub scenario_high: f64,
    pub seed: Option<u64>,
    /// Renewable investment budget, $.
    pub budget: f64,
    pub demand_scale: f64,
    pub ev_share: f64,
    pub free_flow_scale: f64,
    pub beta_time: f64,
    pub beta_cost: f64,

    pub alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub traffic_tolerance: f64,
    pub traffic_max_iter: usize,
    pub qp_tolerance: f64,
    pub nonnegative_charging: bool,
    pub polish: bool,
    pub adaptive_alpha: bool,
    /// Worker threads for per-scenario solves.
    pub threads: usize,

    pub output: PathBuf,
    /// Any of `csv`, `json`.
    pub formats: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let admm = AdmmConfig::default();
        let demand = DemandOptions::default();
        Self {
            network: PathBuf::new(),
            trips: PathBuf::new(),
            power_case: PathBuf::new(),
            coupling: PathBuf::new(),
            sites: None,
            scenarios: None,
            scenario_count: 1,
            scenario_low: 0.5,
            scenario_high: 1.5,
            seed: None,
            budget: 0.0,
            demand_scale: demand.scale,
            ev_share: demand.ev_share,
            free_flow_scale: demand.free_flow_scale,
            beta_time: demand.beta_time,
            beta_cost: demand.beta_cost,
            alpha: admm.alpha,
            epsilon: admm.epsilon,
            max_iter: admm.max_iter,
            traffic_tolerance: admm.traffic_tolerance,
            traffic_max_iter: admm.traffic_max_iter,
            qp_tolerance: admm.qp_tolerance,
            nonnegative_charging: admm.nonnegative_charging,
            polish: admm.polish,
            adaptive_alpha: admm.adaptive_alpha,
            threads: 1,
            output: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

impl RunConfig {
    /// Parses a config; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path, file: &str) -> Result<Self, IoError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::invalid(file, e.message().to_string()))?;
        cfg.check(file)?;
        for p in [&mut cfg.network, &mut cfg.trips, &mut cfg.power_case, &mut cfg.coupling, &mut cfg.output] {
            *p = base.join(&*p);
        }
        for p in [&mut cfg.sites, &mut cfg.scenarios].into_iter().flatten() {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_to_string(path)?, base, &path.display().to_string())
    }

    fn check(&self, file: &str) -> Result<(), IoError> {
        for (key, p) in [
            ("network", &self.network),
            ("trips", &self.trips),
            ("power_case", &self.power_case),
            ("coupling", &self.coupling),
        ] {
            if p.as_os_str().is_empty() {
                return Err(IoError::invalid(file, format!("`{key}` is required")));
            }
        }
        if self.scenarios.is_none() && self.seed.is_none() {
            return Err(IoError::invalid(file, "`seed` is required when scenarios are sampled"));
        }
        if self.scenario_count == 0 {
            return Err(IoError::invalid(file, "`scenario_count` must be at least 1"));
        }
        if self.threads == 0 {
            return Err(IoError::invalid(file, "`threads` must be at least 1"));
        }
        if let Some(f) = self.formats.iter().find(|f| !matches!(f.as_str(), "csv" | "json")) {
            return Err(IoError::invalid(file, format!("unknown report format {f:?}")));
        }
        Ok(())
    }

    pub fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            alpha: self.alpha,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            traffic_tolerance: self.traffic_tolerance,
            traffic_max_iter: self.traffic_max_iter,
            qp_tolerance: self.qp_tolerance,
            nonnegative_charging: self.nonnegative_charging,
            polish: self.polish,
            adaptive_alpha: self.adaptive_alpha,
        }
    }

    pub fn demand(&self) -> DemandOptions {
        DemandOptions {
            scale: self.demand_scale,
            ev_share: self.ev_share,
            free_flow_scale: self.free_flow_scale,
            beta_time: self.beta_time,
            beta_cost: self.beta_cost,
        }
    }

    /// Reads every referenced file and builds the system and scenario set.
    pub fn build(&self) -> Result<(CoupledSystem, ScenarioSet), IoError> {
        let coupling_file = self.coupling.display().to_string();
        let net = read_net(&self.network)?;
        let trips = read_trips(&self.trips)?;
        let mut power = read_power_case(&self.power_case)?;
        power.budget = self.budget;
        if let Some(sites) = &self.sites {
            apply_sites(&mut power, &read_sites(sites)?, &sites.display().to_string())?;
        }
        let rows = read_coupling(&self.coupling)?;
        let nodes: Vec<u32> = (1..=net.nodes).collect();
        check_coupling(&rows, &nodes, &power, &coupling_file)?;
        let transport = build_transport(&net, &trips, destinations(&rows), &self.demand())?;
        let system = CoupledSystem {
            transport,
            power,
            coupling: couplings(&rows),
        };
        let report = system.validate();
        if !report.is_empty() {
            return Err(IoError::invalid("system", format!("{report:?}")));
        }
        let scenarios = match &self.scenarios {
            Some(p) => read_scenarios(p)?,
            None => {
                let sites: Vec<u32> = system
                    .power
                    .buses
                    .iter()
                    .filter(|b| b.renewable.is_some())
                    .map(|b| b.id)
                    .collect();
                sample_uniform(
                    &sites,
                    self.scenario_count,
                    self.scenario_low,
                    self.scenario_high,
                    self.seed.expect("checked"),
                )
                .map_err(|e| IoError::invalid("scenarios", e.to_string()))?
            }
        };
        Ok((system, scenarios))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_paths() {
        let text = "network = \"n.tntp\"\ntrips = \"t.tntp\"\npower_case = \"c.m\"\ncoupling = \"c.csv\"\nseed = 3\nepsilon = 1e-4\n";
        let cfg = RunConfig::parse(text, Path::new("/data"), "x").unwrap();
        assert_eq!(cfg.network, PathBuf::from("/data/n.tntp"));
        assert_eq!(cfg.output, PathBuf::from("/data/out"));
        assert_eq!(cfg.admm().epsilon, 1e-4);
        assert_eq!(cfg.admm().alpha, 1.0);
    }

    #[test]
    fn sampled_scenarios_need_a_seed() {
        let text = "network = \"n\"\ntrips = \"t\"\npower_case = \"c\"\ncoupling = \"c\"\n";
        assert!(RunConfig::parse(text, Path::new("."), "x").unwrap_err().to_string().contains("seed"));
        let typo = format!("{text}seed = 1\nepsilonn = 1\n");
        assert!(RunConfig::parse(&typo, Path::new("."), "x").is_err());
    }
}
