//! Result bundles: CSV tables with a units row under the header, a JSON
//! mirror, and the convergence trace.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ptequil_core::admm::{EquilibriumResult, TraceRow};
use ptequil_core::dispatch::DispatchSolution;
use ptequil_core::network::CoupledSystem;
use ptequil_core::oracle::{from_equilibrium, OracleSolution, PriceSet, SystemState};
use ptequil_core::scenario::ScenarioSet;
use ptequil_core::traffic::{OdFlow, TrafficSolution};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Admm,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub method: Method,
    pub config: RunConfig,
    pub converged: bool,
    pub iterations: usize,
    /// ADMM gap, or the oracle's final KKT residual.
    pub gap: f64,
    /// $.
    pub expected_objective: f64,
    /// Vehicle hours.
    pub expected_travel_time: f64,
    /// Generation plus investment, $.
    pub expected_energy_cost: f64,
    pub scenarios: ScenarioSet,
    pub destination_nodes: Vec<u32>,
    pub destination_buses: Vec<u32>,
    pub expected_prices: Vec<f64>,
    pub expected_charging_prices: Vec<f64>,
    pub state: SystemState,
    pub prices: PriceSet,
    pub trace: Vec<TraceRow>,
}

impl ResultBundle {
    pub fn from_admm(config: &RunConfig, system: &CoupledSystem, scenarios: &ScenarioSet, r: &EquilibriumResult) -> Self {
        let (state, prices) = from_equilibrium(system, r);
        Self {
            method: Method::Admm,
            config: config.clone(),
            converged: r.converged,
            iterations: r.iterations,
            gap: r.gap,
            expected_objective: r.expected_objective,
            expected_travel_time: r.expected_travel_time,
            expected_energy_cost: r.expected_energy_cost,
            scenarios: scenarios.clone(),
            destination_nodes: r.destination_nodes.clone(),
            destination_buses: r.destination_buses.clone(),
            expected_prices: r.expected_prices.clone(),
            expected_charging_prices: r.expected_charging_prices.clone(),
            state,
            prices,
            trace: r.trace.clone(),
        }
    }

    pub fn from_oracle(config: &RunConfig, system: &CoupledSystem, scenarios: &ScenarioSet, o: &OracleSolution) -> Self {
        let (rho, lambda) = o.prices.expected(&scenarios.probabilities());
        Self {
            method: Method::Oracle,
            config: config.clone(),
            converged: true,
            iterations: o.iterations,
            gap: o.residual,
            expected_objective: o.expected_objective,
            expected_travel_time: o.expected_travel_time,
            expected_energy_cost: o.expected_energy_cost,
            scenarios: scenarios.clone(),
            destination_nodes: system.transport.destinations.iter().map(|d| d.node).collect(),
            destination_buses: system
                .transport
                .destinations
                .iter()
                .map(|d| system.bus_of(d.node).unwrap_or(0))
                .collect(),
            expected_prices: rho,
            expected_charging_prices: lambda,
            state: o.state.clone(),
            prices: o.prices.clone(),
            trace: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub gap: f64,
    pub expected_objective: f64,
    pub expected_travel_time: f64,
    pub expected_energy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: u32,
    pub probability: f64,
    pub dispatch_objective: f64,
    pub energy_cost: f64,
    pub budget_dual: f64,
    pub kkt_residual: f64,
    pub dispatch_iterations: usize,
    pub traffic_objective: f64,
    pub traffic_iterations: usize,
    pub traffic_gap: f64,
    pub traffic_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRow {
    pub scenario: u32,
    pub bus: u32,
    pub theta: f64,
    pub conventional: f64,
    pub investment: f64,
    pub renewable: f64,
    pub demand: f64,
    pub charging: f64,
    pub price: f64,
    pub charging_price: f64,
    pub capacity_dual: f64,
    pub generator_upper_dual: f64,
    pub generator_lower_dual: f64,
    pub investment_dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub scenario: u32,
    pub branch: u32,
    pub flow: f64,
    pub line_dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub scenario: u32,
    pub link: u32,
    pub tail: u32,
    pub head: u32,
    pub flow: f64,
    pub travel_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Ev,
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdRow {
    pub scenario: u32,
    pub class: Class,
    pub index: usize,
    pub origin: u32,
    pub destination: u32,
    pub flow: f64,
    pub travel_time: f64,
}

/// Nonzero per-class link flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLinkRow {
    pub scenario: u32,
    pub class: Class,
    pub index: usize,
    pub link: u32,
    pub flow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Bus,
    Destination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub scenario: u32,
    pub element: Element,
    pub id: u32,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPriceRow {
    pub element: Element,
    pub id: u32,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestmentRow {
    pub bus: u32,
    pub investment: f64,
}

const SUMMARY_UNITS: &[&str] = &["-", "-", "-", "-", "$", "veh*h", "$"];
const SCENARIO_UNITS: &[&str] = &["-", "-", "$", "$", "$/$", "-", "-", "$", "-", "-", "-"];
const BUS_UNITS: &[&str] = &[
    "-", "-", "rad", "MW", "MW", "MW", "MW", "MW", "$/MWh", "$/MWh", "$/MW", "$/MWh", "$/MWh", "$/MW",
];
const BRANCH_UNITS: &[&str] = &["-", "-", "MW", "$/MWh"];
const LINK_UNITS: &[&str] = &["-", "-", "-", "-", "veh/h", "h"];
const OD_UNITS: &[&str] = &["-", "-", "-", "-", "-", "veh/h", "h"];
const CLASS_LINK_UNITS: &[&str] = &["-", "-", "-", "-", "veh/h"];
const PRICE_UNITS: &[&str] = &["-", "-", "-", "$/MWh"];
const EXPECTED_UNITS: &[&str] = &["-", "-", "$/MWh"];
const INVESTMENT_UNITS: &[&str] = &["-", "MW"];
const TRACE_UNITS: &[&str] = &["-", "-", "-", "-", "$", "ms"];

fn write_table<T: Serialize>(path: &Path, units: &[&str], rows: &[T]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    if let Some(first) = rows.first() {
        // header names come from the row type; the units row goes under them
        let mut probe = csv::Writer::from_writer(Vec::new());
        probe.serialize(first)?;
        let bytes = probe.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        let text = String::from_utf8(bytes).expect("csv output is utf-8");
        w.write_record(text.lines().next().unwrap_or_default().split(','))?;
        w.write_record(units)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if k == 0 {
            continue;
        }
        out.push(
            rec.deserialize(Some(&headers))
                .map_err(|e| IoError::parse(&file, k + 2, e.to_string()))?,
        );
    }
    Ok(out)
}

fn class_rows(k: u32, class: Class, flows: &[OdFlow], od: &mut Vec<OdRow>, links: &mut Vec<ClassLinkRow>, ids: &[u32]) {
    for (index, f) in flows.iter().enumerate() {
        od.push(OdRow {
            scenario: k,
            class,
            index,
            origin: f.origin,
            destination: f.destination,
            flow: f.flow,
            travel_time: f.travel_time,
        });
        for (&link, &flow) in ids.iter().zip(&f.link_flows) {
            if flow != 0.0 {
                links.push(ClassLinkRow {
                    scenario: k,
                    class,
                    index,
                    link,
                    flow,
                });
            }
        }
    }
}

/// Writes the CSV tables for `bundle` into `dir`.
pub fn write_tables(dir: &Path, system: &CoupledSystem, bundle: &ResultBundle) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let link_ids: Vec<u32> = system.transport.links.iter().map(|l| l.id).collect();
    let mut scenarios = Vec::new();
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut links = Vec::new();
    let mut od = Vec::new();
    let mut class_links = Vec::new();
    let mut prices = Vec::new();
    for (k, sc) in bundle.scenarios.scenarios.iter().enumerate() {
        let id = sc.id;
        let d = &bundle.state.dispatch[k];
        let t = &bundle.state.traffic[k];
        scenarios.push(ScenarioRow {
            scenario: id,
            probability: sc.probability,
            dispatch_objective: d.objective,
            energy_cost: d.energy_cost,
            budget_dual: d.budget_dual,
            kkt_residual: d.kkt_residual,
            dispatch_iterations: d.iterations,
            traffic_objective: t.objective,
            traffic_iterations: t.iterations,
            traffic_gap: t.relative_gap,
            traffic_converged: t.converged,
        });
        for (j, &bus) in d.bus_ids.iter().enumerate() {
            buses.push(BusRow {
                scenario: id,
                bus,
                theta: d.theta[j],
                conventional: d.conventional[j],
                investment: d.investment[j],
                renewable: d.renewable[j],
                demand: d.demand[j],
                charging: d.charging[j],
                price: d.prices[j],
                charging_price: d.charging_prices[j],
                capacity_dual: d.capacity_duals[j],
                generator_upper_dual: d.generator_upper_duals[j],
                generator_lower_dual: d.generator_lower_duals[j],
                investment_dual: d.investment_duals[j],
            });
            prices.push(PriceRow {
                scenario: id,
                element: Element::Bus,
                id: bus,
                price: bundle.prices.rho[k][j],
            });
        }
        for (node, &price) in bundle.destination_nodes.iter().zip(&bundle.prices.lambda[k]) {
            prices.push(PriceRow {
                scenario: id,
                element: Element::Destination,
                id: *node,
                price,
            });
        }
        for (j, &branch) in d.branch_ids.iter().enumerate() {
            branches.push(BranchRow {
                scenario: id,
                branch,
                flow: d.flows[j],
                line_dual: d.line_duals[j],
            });
        }
        for (l, &v) in system.transport.links.iter().zip(&t.link_flows) {
            links.push(LinkRow {
                scenario: id,
                link: l.id,
                tail: l.tail,
                head: l.head,
                flow: v,
                travel_time: l.travel_time(v),
            });
        }
        class_rows(id, Class::Ev, &t.ev_flows, &mut od, &mut class_links, &link_ids);
        class_rows(id, Class::Conventional, &t.conventional_flows, &mut od, &mut class_links, &link_ids);
    }
    let bus_ids = bundle.state.dispatch.first().map(|d| d.bus_ids.clone()).unwrap_or_default();
    let investment: Vec<InvestmentRow> = bus_ids
        .iter()
        .zip(&bundle.state.investment)
        .map(|(&bus, &investment)| InvestmentRow { bus, investment })
        .collect();
    let expected: Vec<ExpectedPriceRow> = bus_ids
        .iter()
        .zip(&bundle.expected_prices)
        .map(|(&id, &price)| ExpectedPriceRow {
            element: Element::Bus,
            id,
            price,
        })
        .chain(
            bundle
                .destination_nodes
                .iter()
                .zip(&bundle.expected_charging_prices)
                .map(|(&id, &price)| ExpectedPriceRow {
                    element: Element::Destination,
                    id,
                    price,
                }),
        )
        .collect();
    let summary = [SummaryRow {
        method: bundle.method,
        converged: bundle.converged,
        iterations: bundle.iterations,
        gap: bundle.gap,
        expected_objective: bundle.expected_objective,
        expected_travel_time: bundle.expected_travel_time,
        expected_energy_cost: bundle.expected_energy_cost,
    }];
    write_table(&dir.join("summary.csv"), SUMMARY_UNITS, &summary)?;
    write_table(&dir.join("scenarios.csv"), SCENARIO_UNITS, &scenarios)?;
    write_table(&dir.join("buses.csv"), BUS_UNITS, &buses)?;
    write_table(&dir.join("branches.csv"), BRANCH_UNITS, &branches)?;
    write_table(&dir.join("links.csv"), LINK_UNITS, &links)?;
    write_table(&dir.join("od_flows.csv"), OD_UNITS, &od)?;
    write_table(&dir.join("class_link_flows.csv"), CLASS_LINK_UNITS, &class_links)?;
    write_table(&dir.join("prices.csv"), PRICE_UNITS, &prices)?;
    write_table(&dir.join("expected_prices.csv"), EXPECTED_UNITS, &expected)?;
    write_table(&dir.join("investment.csv"), INVESTMENT_UNITS, &investment)?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), IoError> {
    write_table(path, TRACE_UNITS, trace)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, IoError> {
    read_table(path)
}

pub fn write_json(path: &Path, bundle: &ResultBundle) -> Result<(), IoError> {
    let file = File::create(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::to_writer(BufWriter::new(file), bundle)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<ResultBundle, IoError> {
    let file = File::open(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn group<T, K: PartialEq>(rows: Vec<T>, key: impl Fn(&T) -> K) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some(g) if key(&g[0]) == key(&r) => g.push(r),
            _ => out.push(vec![r]),
        }
    }
    out
}

/// Rebuilds the state and prices from the CSV tables in `dir`.
pub fn read_tables(dir: &Path) -> Result<(SystemState, PriceSet), IoError> {
    let file = dir.display().to_string();
    let scenarios: Vec<ScenarioRow> = read_table(&dir.join("scenarios.csv"))?;
    let buses = group(read_table::<BusRow>(&dir.join("buses.csv"))?, |r| r.scenario);
    let branches = group(read_table::<BranchRow>(&dir.join("branches.csv"))?, |r| r.scenario);
    let links = group(read_table::<LinkRow>(&dir.join("links.csv"))?, |r| r.scenario);
    let od = read_table::<OdRow>(&dir.join("od_flows.csv"))?;
    let class_links = read_table::<ClassLinkRow>(&dir.join("class_link_flows.csv"))?;
    let prices = read_table::<PriceRow>(&dir.join("prices.csv"))?;
    let investment: Vec<InvestmentRow> = read_table(&dir.join("investment.csv"))?;

    let n = scenarios.len();
    if buses.len() != n || links.len() != n || (branches.len() != n && !branches.is_empty()) {
        return Err(IoError::invalid(&file, "tables disagree on the number of scenarios"));
    }
    let mut dispatch = Vec::with_capacity(n);
    let mut traffic = Vec::with_capacity(n);
    let mut rho = vec![Vec::new(); n];
    let mut lambda = vec![Vec::new(); n];
    for (k, s) in scenarios.iter().enumerate() {
        let b = &buses[k];
        let br: &[BranchRow] = branches.get(k).map_or(&[], Vec::as_slice);
        let col = |f: fn(&BusRow) -> f64| b.iter().map(f).collect::<Vec<f64>>();
        dispatch.push(DispatchSolution {
            bus_ids: b.iter().map(|r| r.bus).collect(),
            branch_ids: br.iter().map(|r| r.branch).collect(),
            theta: col(|r| r.theta),
            flows: br.iter().map(|r| r.flow).collect(),
            conventional: col(|r| r.conventional),
            investment: col(|r| r.investment),
            renewable: col(|r| r.renewable),
            demand: col(|r| r.demand),
            charging: col(|r| r.charging),
            prices: col(|r| r.price),
            charging_prices: col(|r| r.charging_price),
            capacity_duals: col(|r| r.capacity_dual),
            budget_dual: s.budget_dual,
            generator_upper_duals: col(|r| r.generator_upper_dual),
            generator_lower_duals: col(|r| r.generator_lower_dual),
            line_duals: br.iter().map(|r| r.line_dual).collect(),
            investment_duals: col(|r| r.investment_dual),
            objective: s.dispatch_objective,
            energy_cost: s.energy_cost,
            kkt_residual: s.kkt_residual,
            iterations: s.dispatch_iterations,
        });
        let link_ids: Vec<u32> = links[k].iter().map(|r| r.link).collect();
        let flows_of = |class: Class| -> Result<Vec<OdFlow>, IoError> {
            let mut out: Vec<OdFlow> = od
                .iter()
                .filter(|r| r.scenario == s.scenario && r.class == class)
                .map(|r| OdFlow {
                    origin: r.origin,
                    destination: r.destination,
                    flow: r.flow,
                    link_flows: vec![0.0; link_ids.len()],
                    travel_time: r.travel_time,
                })
                .collect();
            for c in class_links.iter().filter(|c| c.scenario == s.scenario && c.class == class) {
                let j = link_ids
                    .iter()
                    .position(|&l| l == c.link)
                    .ok_or_else(|| IoError::invalid(&file, format!("class flow on unknown link {}", c.link)))?;
                let f = out
                    .get_mut(c.index)
                    .ok_or_else(|| IoError::invalid(&file, format!("class flow for unknown OD index {}", c.index)))?;
                f.link_flows[j] = c.flow;
            }
            Ok(out)
        };
        traffic.push(TrafficSolution {
            link_flows: links[k].iter().map(|r| r.flow).collect(),
            ev_flows: flows_of(Class::Ev)?,
            conventional_flows: flows_of(Class::Conventional)?,
            objective: s.traffic_objective,
            iterations: s.traffic_iterations,
            relative_gap: s.traffic_gap,
            converged: s.traffic_converged,
        });
        for p in prices.iter().filter(|p| p.scenario == s.scenario) {
            match p.element {
                Element::Bus => rho[k].push(p.price),
                Element::Destination => lambda[k].push(p.price),
            }
        }
    }
    Ok((
        SystemState {
            investment: investment.iter().map(|r| r.investment).collect(),
            dispatch,
            traffic,
        },
        PriceSet { rho, lambda },
    ))
}

/// Writes `result.json`, the CSV tables and `trace.csv` as selected by the
/// config's formats.
pub fn write_bundle(dir: &Path, system: &CoupledSystem, bundle: &ResultBundle) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    // `certify` and `report` work from the JSON bundle, so it is always written.
    write_json(&dir.join("result.json"), bundle)?;
    if bundle.config.formats.iter().any(|f| f == "csv") {
        write_tables(dir, system, bundle)?;
    }
    write_trace(&dir.join("trace.csv"), &bundle.trace)?;
    Ok(())
}
