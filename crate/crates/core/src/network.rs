//! Coupled road/power network data model.
//!
//! Road nodes, power buses, links and branches carry external integer ids as
//! they appear in input files. Solvers work on dense indices obtained from
//! [`TransportNetwork::compile`] and [`PowerNetwork::bus_index`].

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Default BPR coefficient when a road file omits it.
pub const DEFAULT_BPR_ALPHA: f64 = 0.15;
/// Default BPR exponent when a road file omits it.
pub const DEFAULT_BPR_BETA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("link {link} references unknown node {node}")]
    UnknownNode { link: u32, node: u32 },
    #[error("negative flow {0} passed to a link cost function")]
    NegativeFlow(f64),
    #[error("unknown power bus {0}")]
    UnknownBus(u32),
}

/// Directed road link with a BPR volume-delay function.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoadLink {
    pub id: u32,
    pub tail: u32,
    pub head: u32,
    /// Hours.
    pub free_flow_time: f64,
    /// Vehicles per hour.
    pub capacity: f64,
    pub bpr_alpha: f64,
    pub bpr_beta: f64,
}

impl RoadLink {
    pub fn new(id: u32, tail: u32, head: u32, free_flow_time: f64, capacity: f64) -> Self {
        Self {
            id,
            tail,
            head,
            free_flow_time,
            capacity,
            bpr_alpha: DEFAULT_BPR_ALPHA,
            bpr_beta: DEFAULT_BPR_BETA,
        }
    }

    /// `t0 * (1 + alpha * (v / cap)^beta)`. Caller guarantees `v >= 0`.
    #[inline]
    pub fn travel_time(&self, v: f64) -> f64 {
        let ratio = v / self.capacity;
        self.free_flow_time * (1.0 + self.bpr_alpha * libm::pow(ratio, self.bpr_beta))
    }

    /// Derivative of [`Self::travel_time`] with respect to flow.
    #[inline]
    pub fn travel_time_slope(&self, v: f64) -> f64 {
        if self.bpr_beta == 0.0 || self.bpr_alpha == 0.0 {
            return 0.0;
        }
        let ratio = v / self.capacity;
        self.free_flow_time * self.bpr_alpha * self.bpr_beta * libm::pow(ratio, self.bpr_beta - 1.0)
            / self.capacity
    }

    /// Closed-form `∫_0^v travel_time(w) dw`.
    #[inline]
    pub fn travel_time_integral(&self, v: f64) -> f64 {
        let b1 = self.bpr_beta + 1.0;
        self.free_flow_time * v
            + self.free_flow_time * self.bpr_alpha * v * libm::pow(v / self.capacity, self.bpr_beta) / b1
    }

    pub fn checked_travel_time(&self, v: f64) -> Result<f64, NetworkError> {
        if v < 0.0 || v.is_nan() {
            return Err(NetworkError::NegativeFlow(v));
        }
        Ok(self.travel_time(v))
    }

    pub fn checked_travel_time_integral(&self, v: f64) -> Result<f64, NetworkError> {
        if v < 0.0 || v.is_nan() {
            return Err(NetworkError::NegativeFlow(v));
        }
        Ok(self.travel_time_integral(v))
    }
}

/// EV trip production at an origin node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvOrigin {
    pub node: u32,
    /// Vehicles per hour.
    pub demand: f64,
}

/// A charging destination available to EV drivers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChargingDestination {
    pub node: u32,
    /// Locational attractiveness (utility units).
    pub attractiveness: f64,
    /// Default charging energy per vehicle arriving here (MWh/vehicle).
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdDemand {
    pub origin: u32,
    pub destination: u32,
    /// Vehicles per hour.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyOverride {
    pub origin: u32,
    pub destination: u32,
    /// MWh/vehicle.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransportNetwork {
    pub nodes: Vec<u32>,
    pub links: Vec<RoadLink>,
    pub ev_origins: Vec<EvOrigin>,
    pub destinations: Vec<ChargingDestination>,
    pub conventional_od: Vec<OdDemand>,
    pub energy_overrides: Vec<EnergyOverride>,
    /// Disutility of travel time (1/hour).
    pub beta_time: f64,
    /// Disutility of money (1/$).
    pub beta_cost: f64,
}

impl TransportNetwork {
    /// Charging energy for an EV trip `origin -> destination`.
    pub fn energy(&self, origin: u32, destination: u32) -> f64 {
        self.energy_overrides
            .iter()
            .find(|o| o.origin == origin && o.destination == destination)
            .map(|o| o.energy)
            .or_else(|| {
                self.destinations
                    .iter()
                    .find(|d| d.node == destination)
                    .map(|d| d.energy)
            })
            .unwrap_or(0.0)
    }

    pub fn total_ev_demand(&self) -> f64 {
        self.ev_origins.iter().map(|o| o.demand).sum()
    }

    /// Node-link incidence and OD incidence vectors.
    pub fn incidence(&self) -> Result<IncidenceStructure, NetworkError> {
        let graph = self.compile()?;
        let n = graph.node_count();
        let mut node_link = vec![vec![0i8; graph.link_count()]; n];
        for (a, link) in graph.links.iter().enumerate() {
            node_link[link.tail][a] = 1;
            node_link[link.head][a] = -1;
        }
        Ok(IncidenceStructure {
            node_ids: graph.node_ids.clone(),
            node_link,
        })
    }

    /// Dense-index view of the road graph.
    pub fn compile(&self) -> Result<RoadGraph, NetworkError> {
        let mut index = BTreeMap::new();
        for (i, &id) in self.nodes.iter().enumerate() {
            index.entry(id).or_insert(i);
        }
        let mut links = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let tail = *index.get(&link.tail).ok_or(NetworkError::UnknownNode {
                link: link.id,
                node: link.tail,
            })?;
            let head = *index.get(&link.head).ok_or(NetworkError::UnknownNode {
                link: link.id,
                node: link.head,
            })?;
            links.push(CompiledLink {
                tail,
                head,
                link: link.clone(),
            });
        }
        let mut out_links = vec![Vec::new(); self.nodes.len()];
        // ascending link id inside each adjacency list; ties in path search
        // resolve towards the lower id
        let mut order: Vec<usize> = (0..links.len()).collect();
        order.sort_by_key(|&a| links[a].link.id);
        for a in order {
            out_links[links[a].tail].push(a);
        }
        Ok(RoadGraph {
            node_ids: self.nodes.clone(),
            index,
            links,
            out_links,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledLink {
    pub tail: usize,
    pub head: usize,
    pub link: RoadLink,
}

/// Road graph with dense node and link indices.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    pub node_ids: Vec<u32>,
    index: BTreeMap<u32, usize>,
    pub links: Vec<CompiledLink>,
    pub out_links: Vec<Vec<usize>>,
}

impl RoadGraph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }
}

/// `node_link[i][a]` is +1 when node `i` is the tail of link `a`, −1 when it
/// is the head.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceStructure {
    pub node_ids: Vec<u32>,
    pub node_link: Vec<Vec<i8>>,
}

impl IncidenceStructure {
    /// OD incidence vector: +1 at the origin row, −1 at the destination row.
    pub fn od_vector(&self, origin: u32, destination: u32) -> Option<Vec<i8>> {
        let r = self.node_ids.iter().position(|&n| n == origin)?;
        let s = self.node_ids.iter().position(|&n| n == destination)?;
        let mut e = vec![0i8; self.node_ids.len()];
        if r != s {
            e[r] = 1;
            e[s] = -1;
        }
        Some(e)
    }

    /// `A · x` for a link-flow vector.
    pub fn apply(&self, flows: &[f64]) -> Vec<f64> {
        self.node_link
            .iter()
            .map(|row| {
                row.iter()
                    .zip(flows)
                    .map(|(&a, &x)| f64::from(a) * x)
                    .sum()
            })
            .collect()
    }
}

/// Quadratic generation cost `c2 g^2 + c1 g + c0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorSpec {
    /// MW.
    pub lower: f64,
    /// MW.
    pub upper: f64,
    pub cost_quadratic: f64,
    pub cost_linear: f64,
    pub cost_constant: f64,
}

impl GeneratorSpec {
    pub fn cost(&self, g: f64) -> f64 {
        self.cost_quadratic * g * g + self.cost_linear * g + self.cost_constant
    }

    pub fn marginal_cost(&self, g: f64) -> f64 {
        2.0 * self.cost_quadratic * g + self.cost_linear
    }
}

/// Candidate renewable investment site.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenewableSiteSpec {
    /// $/MW².
    pub invest_quadratic: f64,
    /// $/MW.
    pub invest_linear: f64,
    /// $/MWh.
    pub operate_linear: f64,
    /// Capital cost charged against the budget, $/MW.
    pub unit_capital_cost: f64,
}

impl RenewableSiteSpec {
    pub fn investment_cost(&self, u: f64) -> f64 {
        self.invest_quadratic * u * u + self.invest_linear * u
    }

    pub fn operating_cost(&self, g: f64) -> f64 {
        self.operate_linear * g
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerBus {
    pub id: u32,
    /// Base load, MW.
    pub load: f64,
    pub generator: Option<GeneratorSpec>,
    pub renewable: Option<RenewableSiteSpec>,
    pub is_reference: bool,
}

impl PowerBus {
    pub fn new(id: u32, load: f64) -> Self {
        Self {
            id,
            load,
            generator: None,
            renewable: None,
            is_reference: false,
        }
    }

    /// True when the bus sells energy into the market (conventional or renewable).
    pub fn has_supply(&self) -> bool {
        self.generator.is_some() || self.renewable.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerBranch {
    pub id: u32,
    pub from_bus: u32,
    pub to_bus: u32,
    /// Flow per unit angle difference (MW/rad).
    pub susceptance: f64,
    /// MW.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerNetwork {
    pub buses: Vec<PowerBus>,
    pub branches: Vec<PowerBranch>,
    /// Renewable investment budget, $.
    pub budget: f64,
}

impl PowerNetwork {
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.load).sum()
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_reference)
    }
}

/// Charging destination `road_node` draws power at `bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Coupling {
    pub road_node: u32,
    pub bus: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoupledSystem {
    pub transport: TransportNetwork,
    pub power: PowerNetwork,
    pub coupling: Vec<Coupling>,
}

impl CoupledSystem {
    /// Bus serving charging destination `road_node`.
    pub fn bus_of(&self, road_node: u32) -> Option<u32> {
        self.coupling
            .iter()
            .find(|c| c.road_node == road_node)
            .map(|c| c.bus)
    }

    /// Bus index for each destination, in destination order.
    pub fn destination_buses(&self) -> Result<Vec<usize>, NetworkError> {
        self.transport
            .destinations
            .iter()
            .map(|d| {
                let bus = self.bus_of(d.node).ok_or(NetworkError::UnknownBus(d.node))?;
                self.power.bus_index(bus).ok_or(NetworkError::UnknownBus(bus))
            })
            .collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Violation {
    /// Element kind and id, e.g. `link 7`.
    pub element: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.element.contains(needle) || v.message.contains(needle))
    }

    fn push(&mut self, element: String, message: impl Into<String>) {
        self.violations.push(Violation {
            element,
            message: message.into(),
        });
    }
}

/// Checks every structural invariant and lists each violation.
pub fn validate(system: &CoupledSystem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let t = &system.transport;
    let p = &system.power;

    let node_set: BTreeSet<u32> = t.nodes.iter().copied().collect();
    if node_set.len() != t.nodes.len() {
        report.push(String::from("road nodes"), "duplicate node id");
    }
    let mut link_ids = BTreeSet::new();
    for link in &t.links {
        let el = format!("link {}", link.id);
        if !link_ids.insert(link.id) {
            report.push(el.clone(), "duplicate link id");
        }
        if !(link.capacity > 0.0) {
            report.push(el.clone(), "capacity must be positive");
        }
        if !(link.free_flow_time > 0.0) {
            report.push(el.clone(), "free-flow time must be positive");
        }
        if !(link.bpr_beta >= 1.0) {
            report.push(el.clone(), "BPR exponent must be at least 1");
        }
        if !(link.bpr_alpha >= 0.0) {
            report.push(el.clone(), "BPR coefficient must be nonnegative");
        }
        for node in [link.tail, link.head] {
            if !node_set.contains(&node) {
                report.push(el.clone(), format!("unknown node {node}"));
            }
        }
    }
    if !(t.beta_time > 0.0) {
        report.push(String::from("utility"), "time coefficient must be positive");
    }
    if !(t.beta_cost > 0.0) {
        report.push(String::from("utility"), "cost coefficient must be positive");
    }
    if t.destinations.is_empty() {
        report.push(String::from("destinations"), "no charging destinations");
    }
    for o in &t.ev_origins {
        let el = format!("origin {}", o.node);
        if !(o.demand >= 0.0) {
            report.push(el.clone(), "EV demand must be nonnegative");
        }
        if !node_set.contains(&o.node) {
            report.push(el, "unknown node");
        }
    }
    for d in &t.destinations {
        let el = format!("destination {}", d.node);
        if !node_set.contains(&d.node) {
            report.push(el.clone(), "unknown node");
        }
        if !(d.energy >= 0.0) {
            report.push(el, "charging energy must be nonnegative");
        }
    }
    for od in &t.conventional_od {
        let el = format!("od {}-{}", od.origin, od.destination);
        if !(od.demand >= 0.0) {
            report.push(el.clone(), "conventional demand must be nonnegative");
        }
        if !node_set.contains(&od.origin) || !node_set.contains(&od.destination) {
            report.push(el, "unknown node");
        }
    }

    // connectivity of every OD pair carrying demand
    if let Ok(graph) = t.compile() {
        let mut reach_cache: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
        let mut reachable = |from: usize, to: usize| -> bool {
            reach_cache
                .entry(from)
                .or_insert_with(|| reachability(&graph, from))[to]
        };
        for o in t.ev_origins.iter().filter(|o| o.demand > 0.0) {
            let Some(r) = graph.node_index(o.node) else { continue };
            for d in &t.destinations {
                let Some(s) = graph.node_index(d.node) else { continue };
                if !reachable(r, s) {
                    report.push(
                        format!("od {}-{}", o.node, d.node),
                        "destination unreachable from origin",
                    );
                }
            }
        }
        for od in t.conventional_od.iter().filter(|od| od.demand > 0.0) {
            let (Some(r), Some(s)) = (graph.node_index(od.origin), graph.node_index(od.destination))
            else {
                continue;
            };
            if !reachable(r, s) {
                report.push(
                    format!("od {}-{}", od.origin, od.destination),
                    "destination unreachable from origin",
                );
            }
        }
    }

    let bus_set: BTreeSet<u32> = p.buses.iter().map(|b| b.id).collect();
    if bus_set.len() != p.buses.len() {
        report.push(String::from("buses"), "duplicate bus id");
    }
    let refs = p.buses.iter().filter(|b| b.is_reference).count();
    if refs != 1 {
        report.push(
            String::from("buses"),
            format!("exactly one reference bus required, found {refs}"),
        );
    }
    for bus in &p.buses {
        let el = format!("bus {}", bus.id);
        if !bus.load.is_finite() {
            report.push(el.clone(), "load must be finite");
        }
        if let Some(g) = &bus.generator {
            if !(g.lower >= 0.0 && g.lower <= g.upper) {
                report.push(el.clone(), "generator bounds must satisfy 0 <= lower <= upper");
            }
            if !(g.cost_quadratic >= 0.0) {
                report.push(el.clone(), "generator quadratic cost must be nonnegative");
            }
        }
        if let Some(r) = &bus.renewable {
            if !(r.invest_quadratic >= 0.0
                && r.invest_linear >= 0.0
                && r.operate_linear >= 0.0
                && r.unit_capital_cost >= 0.0)
            {
                report.push(el.clone(), "renewable costs must be nonnegative");
            }
        }
    }
    for br in &p.branches {
        let el = format!("branch {}", br.id);
        if !(br.susceptance > 0.0) {
            report.push(el.clone(), "susceptance must be positive");
        }
        if !(br.limit > 0.0) {
            report.push(el.clone(), "flow limit must be positive");
        }
        for bus in [br.from_bus, br.to_bus] {
            if !bus_set.contains(&bus) {
                report.push(el.clone(), format!("unknown bus {bus}"));
            }
        }
    }
    if !(p.budget >= 0.0) {
        report.push(String::from("budget"), "budget must be nonnegative");
    }

    let mut coupled_nodes = BTreeSet::new();
    let mut coupled_buses = BTreeSet::new();
    for c in &system.coupling {
        let el = format!("coupling {}->{}", c.road_node, c.bus);
        if !coupled_nodes.insert(c.road_node) {
            report.push(el.clone(), "duplicate road node");
        }
        if !coupled_buses.insert(c.bus) {
            report.push(el.clone(), "bus coupled to more than one destination");
        }
        if !bus_set.contains(&c.bus) {
            report.push(el.clone(), "unknown bus");
        }
        if !node_set.contains(&c.road_node) {
            report.push(el, "unknown road node");
        }
    }
    for d in &t.destinations {
        if !coupled_nodes.contains(&d.node) {
            report.push(
                format!("destination {}", d.node),
                "uncoupled charging destination",
            );
        }
    }
    report
}

fn reachability(graph: &RoadGraph, from: usize) -> Vec<bool> {
    let mut seen = vec![false; graph.node_count()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(i) = stack.pop() {
        for &a in &graph.out_links[i] {
            let j = graph.links[a].head;
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}
