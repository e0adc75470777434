//! Small CSV inputs: coupling, renewable sites and scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ptequil_core::network::{ChargingDestination, Coupling, PowerNetwork, RenewableSiteSpec, TransportNetwork};
use ptequil_core::scenario::{Scenario, ScenarioSet};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub road_node: u32,
    pub power_bus: u32,
    /// Destination attractiveness.
    pub beta0: f64,
    /// Energy per charging vehicle, MWh.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub bus: u32,
    pub invest_quadratic: f64,
    pub invest_linear: f64,
    pub operate_linear: f64,
    pub unit_capital_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: u32,
    pub bus_id: u32,
    pub factor: f64,
    pub probability: f64,
}

fn rows<T: for<'de> Deserialize<'de>>(text: &str, file: &str) -> Result<Vec<T>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| IoError::parse(file, k + 2, e.to_string())))
        .collect()
}

/// Coupling rows; the road nodes listed here are the only places EVs charge.
pub fn parse_coupling(text: &str, file: &str) -> Result<Vec<CouplingRow>, IoError> {
    let out: Vec<CouplingRow> = rows(text, file)?;
    if out.is_empty() {
        return Err(IoError::invalid(file, "no charging destinations"));
    }
    let mut roads = BTreeSet::new();
    let mut buses = BTreeSet::new();
    for r in &out {
        if !roads.insert(r.road_node) {
            return Err(IoError::invalid(file, format!("duplicate road node {}", r.road_node)));
        }
        if !buses.insert(r.power_bus) {
            return Err(IoError::invalid(file, format!("bus {} serves two road nodes", r.power_bus)));
        }
        if !(r.energy > 0.0) {
            return Err(IoError::invalid(file, format!("road node {}: energy must be positive", r.road_node)));
        }
    }
    Ok(out)
}

/// Checks every coupling row against both networks.
pub fn check_coupling(rows: &[CouplingRow], nodes: &[u32], power: &PowerNetwork, file: &str) -> Result<(), IoError> {
    for r in rows {
        if !nodes.contains(&r.road_node) {
            return Err(IoError::invalid(file, format!("unknown road node {}", r.road_node)));
        }
        if power.bus_index(r.power_bus).is_none() {
            return Err(IoError::invalid(file, format!("unknown bus {}", r.power_bus)));
        }
    }
    Ok(())
}

pub fn destinations(rows: &[CouplingRow]) -> Vec<ChargingDestination> {
    rows.iter()
        .map(|r| ChargingDestination {
            node: r.road_node,
            attractiveness: r.beta0,
            energy: r.energy,
        })
        .collect()
}

pub fn couplings(rows: &[CouplingRow]) -> Vec<Coupling> {
    rows.iter()
        .map(|r| Coupling {
            road_node: r.road_node,
            bus: r.power_bus,
        })
        .collect()
}

pub fn parse_sites(text: &str, file: &str) -> Result<Vec<SiteRow>, IoError> {
    let out: Vec<SiteRow> = rows(text, file)?;
    let mut seen = BTreeSet::new();
    if let Some(r) = out.iter().find(|r| !seen.insert(r.bus)) {
        return Err(IoError::invalid(file, format!("duplicate site at bus {}", r.bus)));
    }
    Ok(out)
}

/// Attaches sites to their buses.
pub fn apply_sites(power: &mut PowerNetwork, sites: &[SiteRow], file: &str) -> Result<(), IoError> {
    for s in sites {
        let k = power
            .bus_index(s.bus)
            .ok_or_else(|| IoError::invalid(file, format!("site at unknown bus {}", s.bus)))?;
        power.buses[k].renewable = Some(RenewableSiteSpec {
            invest_quadratic: s.invest_quadratic,
            invest_linear: s.invest_linear,
            operate_linear: s.operate_linear,
            unit_capital_cost: s.unit_capital_cost,
        });
    }
    Ok(())
}

/// Scenario rows grouped by id in order of first appearance.
pub fn parse_scenarios(text: &str, file: &str) -> Result<ScenarioSet, IoError> {
    let table: Vec<ScenarioRow> = rows(text, file)?;
    let mut order = Vec::new();
    let mut by_id: BTreeMap<u32, Scenario> = BTreeMap::new();
    for r in table {
        let s = by_id.entry(r.scenario_id).or_insert_with(|| {
            order.push(r.scenario_id);
            Scenario {
                id: r.scenario_id,
                factors: BTreeMap::new(),
                probability: r.probability,
            }
        });
        if s.probability != r.probability {
            return Err(IoError::invalid(
                file,
                format!("scenario {} lists two probabilities", r.scenario_id),
            ));
        }
        if s.factors.insert(r.bus_id, r.factor).is_some() {
            return Err(IoError::invalid(
                file,
                format!("scenario {} lists bus {} twice", r.scenario_id, r.bus_id),
            ));
        }
    }
    let scenarios = order.into_iter().map(|id| by_id.remove(&id).expect("grouped")).collect();
    ScenarioSet::new(scenarios).map_err(|e| IoError::invalid(file, e.to_string()))
}

pub fn write_scenarios<W: Write>(set: &ScenarioSet, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for s in &set.scenarios {
        for (&bus, &factor) in &s.factors {
            w.serialize(ScenarioRow {
                scenario_id: s.id,
                bus_id: bus,
                factor,
                probability: s.probability,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_coupling(path: &Path) -> Result<Vec<CouplingRow>, IoError> {
    parse_coupling(&read_to_string(path)?, &path.display().to_string())
}

pub fn read_sites(path: &Path) -> Result<Vec<SiteRow>, IoError> {
    parse_sites(&read_to_string(path)?, &path.display().to_string())
}

pub fn read_scenarios(path: &Path) -> Result<ScenarioSet, IoError> {
    parse_scenarios(&read_to_string(path)?, &path.display().to_string())
}

/// Per-vehicle energy that makes charging `share` of total load when every
/// EV charges once: `e·Q = share·(L + e·Q)`.
pub fn calibrate_energy(transport: &TransportNetwork, base_load: f64, share: f64) -> f64 {
    share * base_load / ((1.0 - share) * transport.total_ev_demand())
}
