//! Reference solver and equilibrium certification.
//!
//! `monolithic_solve` writes the whole stochastic equilibrium as one convex
//! program over path flows and solves it directly with a dense interior
//! point method. It shares no solver code with the decomposed path, so it can
//! serve as ground truth on small instances. `certify` checks any point
//! against the agents' own problems at given prices.

mod certify;
mod ipm;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::admm::EquilibriumResult;
use crate::dispatch::DispatchSolution;
use crate::network::{CoupledSystem, NetworkError, PowerNetwork, RoadGraph, TransportNetwork};
use crate::scenario::{Scenario, ScenarioSet};
use crate::traffic::{OdFlow, TrafficSolution};

pub use certify::{best_response_regret, certify, expected_cost, Agent, CertifyTolerance, EquilibriumCertificate};
use ipm::{IpmFailure, IpmOptions, LinRow, Program, Term};

/// Largest number of variables one scenario may contribute.
pub const SIZE_GUARD: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for the direct solver: {variables} variables in one scenario (limit {limit})")]
    SizeGuardExceeded { variables: usize, limit: usize },
    #[error("no feasible point (primal residual {0:.3e})")]
    Infeasible(f64),
    #[error("direct solver stalled with residual {0:.3e}")]
    NotConverged(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("{0:?} subproblem has no solution")]
    AgentInfeasible(Agent),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub nonnegative_charging: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            nonnegative_charging: false,
        }
    }
}

/// Primal point of the coupled system, one entry per scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemState {
    /// First-stage capacity per bus (MW), zero without a renewable site.
    pub investment: Vec<f64>,
    pub dispatch: Vec<DispatchSolution>,
    pub traffic: Vec<TrafficSolution>,
}

/// Per-scenario prices: `rho[k][bus]` ($/MWh) and `lambda[k][destination]` ($/MWh).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriceSet {
    pub rho: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl PriceSet {
    pub fn expected(&self, probabilities: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mean = |rows: &[Vec<f64>]| {
            let mut out = vec![0.0; rows.first().map_or(0, Vec::len)];
            for (p, row) in probabilities.iter().zip(rows) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += p * v);
            }
            out
        };
        (mean(&self.rho), mean(&self.lambda))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub state: SystemState,
    pub prices: PriceSet,
    pub expected_objective: f64,
    pub expected_travel_time: f64,
    pub expected_energy_cost: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Splits an ADMM result into a point and prices for certification.
pub fn from_equilibrium(system: &CoupledSystem, result: &EquilibriumResult) -> (SystemState, PriceSet) {
    let mut investment = vec![0.0; system.power.buses.len()];
    for (bus, u) in result.renewable_buses.iter().zip(&result.investment) {
        if let Some(k) = system.power.bus_index(*bus) {
            investment[k] = *u;
        }
    }
    (
        SystemState {
            investment,
            dispatch: result.state.dispatch.clone(),
            traffic: result.state.traffic.clone(),
        },
        PriceSet {
            rho: result.scenario_prices.clone(),
            lambda: result.scenario_charging_prices.clone(),
        },
    )
}

/// All simple paths from `r` to `s` as link index lists.
fn simple_paths(graph: &RoadGraph, r: usize, s: usize) -> Vec<Vec<usize>> {
    fn walk(
        graph: &RoadGraph,
        node: usize,
        s: usize,
        seen: &mut [bool],
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if node == s {
            out.push(path.clone());
            return;
        }
        for &a in &graph.out_links[node] {
            let next = graph.links[a].head;
            if seen[next] {
                continue;
            }
            seen[next] = true;
            path.push(a);
            walk(graph, next, s, seen, path, out);
            path.pop();
            seen[next] = false;
        }
    }
    let mut out = Vec::new();
    let mut seen = vec![false; graph.node_count()];
    seen[r] = true;
    walk(graph, r, s, &mut seen, &mut Vec::new(), &mut out);
    out
}

/// One OD class with its path variables.
#[derive(Debug, Clone)]
struct Class {
    origin: u32,
    destination: u32,
    /// Destination position for EV classes.
    dest: usize,
    energy: f64,
    paths: Vec<(Vec<usize>, usize)>,
}

#[derive(Debug, Clone)]
struct TrafficBlock {
    ev: Vec<Class>,
    conv: Vec<Class>,
}

impl TrafficBlock {
    fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.ev
            .iter()
            .chain(&self.conv)
            .flat_map(|c| c.paths.iter().map(|(_, v)| *v))
    }

    fn q(class: &Class, x: &[f64]) -> f64 {
        class.paths.iter().map(|(_, v)| x[*v]).sum()
    }
}

fn count_paths(network: &TransportNetwork, graph: &RoadGraph) -> Result<usize, OracleError> {
    let idx = |n: u32| {
        graph
            .node_index(n)
            .ok_or_else(|| OracleError::Invalid(alloc::format!("unknown road node {n}")))
    };
    let mut total = 0;
    for o in network.ev_origins.iter().filter(|o| o.demand > 0.0) {
        for d in &network.destinations {
            total += simple_paths(graph, idx(o.node)?, idx(d.node)?).len();
        }
    }
    for od in network.conventional_od.iter().filter(|od| od.demand > 0.0) {
        total += simple_paths(graph, idx(od.origin)?, idx(od.destination)?).len();
    }
    Ok(total)
}

/// Adds path variables, the travel objective scaled by `weight`, per-class
/// linear costs `weight · price[dest] · e` and the demand rows.
fn add_traffic(
    program: &mut Program,
    x0: &mut Vec<f64>,
    network: &TransportNetwork,
    graph: &RoadGraph,
    weight: f64,
    prices: Option<&[f64]>,
) -> Result<TrafficBlock, OracleError> {
    let cw = network.beta_time / network.beta_cost;
    let ew = 1.0 / network.beta_cost;
    let new_class = |program: &mut Program, x0: &mut Vec<f64>, r: u32, s: u32, demand_guess: f64| {
        let (Some(ri), Some(si)) = (graph.node_index(r), graph.node_index(s)) else {
            return Err(OracleError::Invalid(alloc::format!("unknown road node in OD {r}->{s}")));
        };
        let paths = simple_paths(graph, ri, si);
        if paths.is_empty() {
            return Err(OracleError::Invalid(alloc::format!("destination {s} unreachable from {r}")));
        }
        let share = demand_guess / paths.len() as f64;
        let paths = paths
            .into_iter()
            .map(|p| {
                let v = program.n;
                program.n += 1;
                program.nonnegative.push(v);
                x0.push(share);
                (p, v)
            })
            .collect();
        Ok(Class {
            origin: r,
            destination: s,
            dest: 0,
            energy: 0.0,
            paths,
        })
    };
    let mut ev = Vec::new();
    for o in network.ev_origins.iter().filter(|o| o.demand > 0.0) {
        let mut row = Vec::new();
        let guess = o.demand / network.destinations.len() as f64;
        for (k, d) in network.destinations.iter().enumerate() {
            let mut class = new_class(program, x0, o.node, d.node, guess)?;
            class.dest = k;
            class.energy = network.energy(o.node, d.node);
            let vars: Vec<usize> = class.paths.iter().map(|(_, v)| *v).collect();
            program.terms.push(Term::Entropy {
                vars: vars.clone(),
                weight: weight * ew,
                attractiveness: d.attractiveness,
            });
            if let Some(p) = prices {
                for &v in &vars {
                    program.terms.push(Term::Quadratic {
                        var: v,
                        a: 0.0,
                        b: weight * p[k] * class.energy,
                    });
                }
            }
            row.extend(vars.iter().map(|&v| (v, 1.0)));
            ev.push(class);
        }
        program.equalities.push(LinRow::new(row, o.demand));
    }
    let mut conv = Vec::new();
    for od in network.conventional_od.iter().filter(|od| od.demand > 0.0) {
        let class = new_class(program, x0, od.origin, od.destination, od.demand)?;
        program
            .equalities
            .push(LinRow::new(class.paths.iter().map(|(_, v)| (*v, 1.0)).collect(), od.demand));
        conv.push(class);
    }
    let mut on_link: Vec<Vec<usize>> = vec![Vec::new(); graph.link_count()];
    for class in ev.iter().chain(&conv) {
        for (path, v) in &class.paths {
            path.iter().for_each(|&a| on_link[a].push(*v));
        }
    }
    for (a, vars) in on_link.into_iter().enumerate() {
        if !vars.is_empty() {
            program.terms.push(Term::Congestion {
                link: graph.links[a].link.clone(),
                vars,
                weight: weight * cw,
            });
        }
    }
    Ok(TrafficBlock { ev, conv })
}

/// Travel objective in $: `β1/β2 Σ∫t + 1/β2 Σ q(ln q − 1 − β0) + Σ λ e q`.
fn travel_objective(network: &TransportNetwork, solution: &TrafficSolution, prices: Option<&[f64]>) -> f64 {
    let cw = network.beta_time / network.beta_cost;
    let ew = 1.0 / network.beta_cost;
    let congestion: f64 = network
        .links
        .iter()
        .zip(&solution.link_flows)
        .map(|(l, &v)| l.travel_time_integral(v))
        .sum();
    let mut rest = 0.0;
    for f in &solution.ev_flows {
        let Some(k) = network.destinations.iter().position(|d| d.node == f.destination) else {
            continue;
        };
        let q = f.flow;
        let beta0 = network.destinations[k].attractiveness;
        if q > 0.0 {
            rest += ew * (q * libm::log(q) - q - beta0 * q);
        }
        if let Some(p) = prices {
            rest += p[k] * network.energy(f.origin, f.destination) * q;
        }
    }
    cw * congestion + rest
}

fn traffic_solution(
    network: &TransportNetwork,
    graph: &RoadGraph,
    block: &TrafficBlock,
    x: &[f64],
    prices: Option<&[f64]>,
    iterations: usize,
    residual: f64,
) -> TrafficSolution {
    let m = graph.link_count();
    let mut link_flows = vec![0.0; m];
    let times_of = |flows: &[f64]| -> Vec<f64> {
        graph
            .links
            .iter()
            .zip(flows)
            .map(|(l, &v)| l.link.travel_time(v))
            .collect()
    };
    let od_flow = |class: &Class, flow: f64, link_flows: &mut [f64]| {
        let mut own = vec![0.0; m];
        for (path, v) in &class.paths {
            let h = x[*v].max(0.0);
            for &a in path {
                own[a] += h;
                link_flows[a] += h;
            }
        }
        OdFlow {
            origin: class.origin,
            destination: class.destination,
            flow,
            link_flows: own,
            travel_time: 0.0,
        }
    };
    let mut ev_flows: Vec<OdFlow> = block
        .ev
        .iter()
        .map(|c| od_flow(c, TrafficBlock::q(c, x), &mut link_flows))
        .collect();
    let mut conventional_flows: Vec<OdFlow> = block
        .conv
        .iter()
        .zip(network.conventional_od.iter().filter(|od| od.demand > 0.0))
        .map(|(c, od)| od_flow(c, od.demand, &mut link_flows))
        .collect();
    let times = times_of(&link_flows);
    let shortest = |class: &Class| {
        class
            .paths
            .iter()
            .map(|(p, _)| p.iter().map(|&a| times[a]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    for (f, c) in ev_flows.iter_mut().zip(&block.ev) {
        f.travel_time = shortest(c);
    }
    for (f, c) in conventional_flows.iter_mut().zip(&block.conv) {
        f.travel_time = shortest(c);
    }
    let mut solution = TrafficSolution {
        link_flows,
        ev_flows,
        conventional_flows,
        objective: 0.0,
        iterations,
        relative_gap: residual,
        converged: true,
    };
    solution.objective = travel_objective(network, &solution, prices);
    solution
}

/// Variable indices of one scenario's power block.
struct PowerBlock {
    theta: Vec<usize>,
    conventional: Vec<Option<usize>>,
    renewable: Vec<Option<usize>>,
    charging: Vec<Option<usize>>,
    balance_rows: Vec<usize>,
    capacity_rows: Vec<Option<usize>>,
    gen_rows: Vec<(Option<usize>, Option<usize>)>,
    line_rows: Vec<(Option<usize>, Option<usize>)>,
}

fn branch_ends(power: &PowerNetwork) -> Result<Vec<(usize, usize)>, OracleError> {
    power
        .branches
        .iter()
        .map(|br| match (power.bus_index(br.from_bus), power.bus_index(br.to_bus)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(OracleError::Invalid(alloc::format!("branch {} references an unknown bus", br.id))),
        })
        .collect()
}

/// Direct solve of the whole stochastic equilibrium.
pub fn monolithic_solve(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    options: &OracleOptions,
) -> Result<OracleSolution, OracleError> {
    scenarios
        .check()
        .map_err(|e| OracleError::Invalid(alloc::format!("{e}")))?;
    let power = &system.power;
    let network = &system.transport;
    let graph = network.compile()?;
    let nb = power.buses.len();
    let reference = power
        .reference_bus()
        .ok_or_else(|| OracleError::Invalid("no reference bus".into()))?;
    let ends = branch_ends(power)?;
    let dest_bus: Vec<usize> = system.destination_buses()?;

    let per_scenario = nb
        + power.buses.iter().filter(|b| b.generator.is_some()).count()
        + power.buses.iter().filter(|b| b.renewable.is_some()).count()
        + dest_bus.len()
        + count_paths(network, &graph)?;
    if per_scenario > SIZE_GUARD {
        return Err(OracleError::SizeGuardExceeded {
            variables: per_scenario,
            limit: SIZE_GUARD,
        });
    }

    let mut program = Program::default();
    let mut x0 = Vec::new();
    let capital: f64 = power
        .buses
        .iter()
        .filter_map(|b| b.renewable.as_ref().map(|r| r.unit_capital_cost))
        .sum();
    let u_start = if capital > 0.0 {
        (0.5 * power.budget / capital).clamp(1e-2, 1e3)
    } else {
        1.0
    };
    let mut invest: Vec<Option<usize>> = vec![None; nb];
    let mut budget_row = Vec::new();
    for (k, bus) in power.buses.iter().enumerate() {
        if let Some(site) = &bus.renewable {
            let v = program.n;
            program.n += 1;
            x0.push(u_start);
            program.nonnegative.push(v);
            program.terms.push(Term::Quadratic {
                var: v,
                a: site.invest_quadratic,
                b: site.invest_linear,
            });
            if site.unit_capital_cost != 0.0 {
                budget_row.push((v, site.unit_capital_cost));
            }
            invest[k] = Some(v);
        }
    }
    let budget_index = if budget_row.is_empty() {
        None
    } else {
        program.inequalities.push(LinRow::new(budget_row, power.budget));
        Some(program.inequalities.len() - 1)
    };

    let mut blocks = Vec::new();
    let mut constant = 0.0;
    for scenario in &scenarios.scenarios {
        let prob = scenario.probability;
        let (pb, tb) = add_scenario(
            &mut program,
            &mut x0,
            system,
            &graph,
            scenario,
            &invest,
            reference,
            &ends,
            &dest_bus,
            options.nonnegative_charging,
        )?;
        constant += prob
            * power
                .buses
                .iter()
                .filter_map(|b| b.generator.as_ref().map(|g| g.cost_constant))
                .sum::<f64>();
        blocks.push((pb, tb));
    }

    let sol = ipm::solve(
        &program,
        &x0,
        &IpmOptions {
            tolerance: options.tolerance,
            max_iterations: options.max_iterations,
        },
    )
    .map_err(|IpmFailure::Stalled { primal, residual }| {
        if primal > 1e-6 {
            OracleError::Infeasible(primal)
        } else {
            OracleError::NotConverged(residual)
        }
    })?;

    let x = &sol.x;
    let investment: Vec<f64> = invest.iter().map(|v| v.map_or(0.0, |j| x[j].max(0.0))).collect();
    let investment_cost: f64 = power
        .buses
        .iter()
        .zip(&investment)
        .filter_map(|(b, &u)| b.renewable.as_ref().map(|r| r.investment_cost(u)))
        .sum();
    let budget_dual = budget_index.map_or(0.0, |r| sol.z[r]);

    let mut dispatch = Vec::new();
    let mut traffic = Vec::new();
    let mut rho = Vec::new();
    let mut lambda = Vec::new();
    let mut expected_travel_time = 0.0;
    let mut expected_energy_cost = 0.0;
    let mut expected_objective = investment_cost + constant;
    for (scenario, (pb, tb)) in scenarios.scenarios.iter().zip(&blocks) {
        let prob = scenario.probability;
        let pick = |v: &Option<usize>| v.map_or(0.0, |j| x[j]);
        let zdual = |r: &Option<usize>| r.map_or(0.0, |r| sol.z[r] / prob);
        let prices: Vec<f64> = pb.balance_rows.iter().map(|&r| sol.y[r] / prob).collect();
        let clear_base = pb.balance_rows.last().map_or(0, |r| r + 2);
        let lam: Vec<f64> = (0..dest_bus.len()).map(|s| sol.y[clear_base + s] / prob).collect();
        let mut charging_prices = vec![0.0; nb];
        for (s, &b) in dest_bus.iter().enumerate() {
            charging_prices[b] = lam[s];
        }
        let conventional: Vec<f64> = pb.conventional.iter().map(pick).collect();
        let renewable: Vec<f64> = pb.renewable.iter().map(pick).collect();
        let mut operating = 0.0;
        for (i, bus) in power.buses.iter().enumerate() {
            if let Some(g) = &bus.generator {
                operating += g.cost(conventional[i]);
            }
            if let Some(r) = &bus.renewable {
                operating += r.operating_cost(renewable[i]);
            }
        }
        let energy_cost = investment_cost + operating;
        let theta: Vec<f64> = pb.theta.iter().map(|&j| x[j]).collect();
        let flows = power
            .branches
            .iter()
            .zip(&ends)
            .map(|(br, &(a, b))| br.susceptance * (theta[a] - theta[b]))
            .collect();
        let demand = power
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| if b.has_supply() { conventional[i] + renewable[i] } else { 0.0 })
            .collect();
        dispatch.push(DispatchSolution {
            bus_ids: power.buses.iter().map(|b| b.id).collect(),
            branch_ids: power.branches.iter().map(|b| b.id).collect(),
            theta,
            flows,
            conventional,
            investment: investment.clone(),
            renewable,
            demand,
            charging: pb.charging.iter().map(pick).collect(),
            prices: prices.clone(),
            charging_prices,
            capacity_duals: pb.capacity_rows.iter().map(zdual).collect(),
            budget_dual,
            generator_upper_duals: pb.gen_rows.iter().map(|(u, _)| zdual(u)).collect(),
            generator_lower_duals: pb.gen_rows.iter().map(|(_, l)| zdual(l)).collect(),
            line_duals: pb.line_rows.iter().map(|(u, l)| zdual(u) - zdual(l)).collect(),
            investment_duals: vec![0.0; nb],
            objective: energy_cost,
            energy_cost,
            kkt_residual: sol.residual,
            iterations: sol.iterations,
        });
        let t = traffic_solution(network, &graph, tb, x, Some(&lam), sol.iterations, sol.residual);
        expected_travel_time += prob * t.total_travel_time(network);
        expected_energy_cost += prob * energy_cost;
        expected_objective += prob * (operating + travel_objective(network, &t, None));
        traffic.push(t);
        rho.push(prices);
        lambda.push(lam);
    }
    Ok(OracleSolution {
        state: SystemState {
            investment,
            dispatch,
            traffic,
        },
        prices: PriceSet { rho, lambda },
        expected_objective,
        expected_travel_time,
        expected_energy_cost,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Adds one scenario: power block, traffic block, then the clearing rows
/// right after the reference-angle row.
#[allow(clippy::too_many_arguments)]
fn add_scenario(
    program: &mut Program,
    x0: &mut Vec<f64>,
    system: &CoupledSystem,
    graph: &RoadGraph,
    scenario: &Scenario,
    invest: &[Option<usize>],
    reference: usize,
    ends: &[(usize, usize)],
    dest_bus: &[usize],
    nonnegative_charging: bool,
) -> Result<(PowerBlock, TrafficBlock), OracleError> {
    let power = &system.power;
    let network = &system.transport;
    let prob = scenario.probability;
    let nb = power.buses.len();
    let var = |program: &mut Program, x0: &mut Vec<f64>, start: f64| {
        program.n += 1;
        x0.push(start);
        program.n - 1
    };
    let theta: Vec<usize> = (0..nb).map(|_| var(program, x0, 0.0)).collect();
    let mut conventional = vec![None; nb];
    let mut renewable = vec![None; nb];
    let mut charging = vec![None; nb];
    let mut capacity_rows = vec![None; nb];
    let mut gen_rows = vec![(None, None); nb];
    let ev_total: f64 = network.ev_origins.iter().map(|o| o.demand.max(0.0)).sum();
    for (i, bus) in power.buses.iter().enumerate() {
        if let Some(g) = &bus.generator {
            let hi = if g.upper.is_finite() { g.upper } else { g.lower + bus.load.max(1.0) };
            let v = var(program, x0, 0.5 * (g.lower + hi.min(g.lower + bus.load.max(1.0))));
            program.terms.push(Term::Quadratic {
                var: v,
                a: prob * g.cost_quadratic,
                b: prob * g.cost_linear,
            });
            let upper = g.upper.is_finite().then(|| {
                program.inequalities.push(LinRow::new(vec![(v, 1.0)], g.upper));
                program.inequalities.len() - 1
            });
            program.inequalities.push(LinRow::new(vec![(v, -1.0)], -g.lower));
            gen_rows[i] = (upper, Some(program.inequalities.len() - 1));
            conventional[i] = Some(v);
        }
        if let (Some(site), Some(u)) = (&bus.renewable, invest[i]) {
            let xi = scenario.factor(bus.id);
            let v = var(program, x0, (0.5 * xi * x0[u]).max(1e-2));
            program.nonnegative.push(v);
            if site.operate_linear != 0.0 {
                program.terms.push(Term::Quadratic {
                    var: v,
                    a: 0.0,
                    b: prob * site.operate_linear,
                });
            }
            program.inequalities.push(LinRow::new(vec![(v, 1.0), (u, -xi)], 0.0));
            capacity_rows[i] = Some(program.inequalities.len() - 1);
            renewable[i] = Some(v);
        }
    }
    for (s, &b) in dest_bus.iter().enumerate() {
        let e = network.destinations[s].energy;
        let guess = (e * ev_total / dest_bus.len() as f64).max(1e-2);
        let v = var(program, x0, guess);
        if nonnegative_charging {
            program.nonnegative.push(v);
        }
        charging[b] = Some(v);
    }
    let mut line_rows = Vec::new();
    for (br, &(a, b)) in power.branches.iter().zip(ends) {
        if br.limit.is_finite() {
            let row = vec![(theta[a], br.susceptance), (theta[b], -br.susceptance)];
            program.inequalities.push(LinRow::new(row.clone(), br.limit));
            let up = program.inequalities.len() - 1;
            program
                .inequalities
                .push(LinRow::new(row.iter().map(|&(j, c)| (j, -c)).collect(), br.limit));
            line_rows.push((Some(up), Some(up + 1)));
        } else {
            line_rows.push((None, None));
        }
    }
    let mut balance_rows = Vec::new();
    for (i, bus) in power.buses.iter().enumerate() {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for (br, &(a, b)) in power.branches.iter().zip(ends) {
            let sign = if a == i {
                1.0
            } else if b == i {
                -1.0
            } else {
                continue;
            };
            *row.entry(theta[a]).or_default() += sign * br.susceptance;
            *row.entry(theta[b]).or_default() -= sign * br.susceptance;
        }
        for v in [conventional[i], renewable[i]].into_iter().flatten() {
            *row.entry(v).or_default() -= 1.0;
        }
        if let Some(v) = charging[i] {
            *row.entry(v).or_default() += 1.0;
        }
        program
            .equalities
            .push(LinRow::new(row.into_iter().filter(|(_, c)| *c != 0.0).collect(), -bus.load));
        balance_rows.push(program.equalities.len() - 1);
    }
    program.equalities.push(LinRow::new(vec![(theta[reference], 1.0)], 0.0));
    // clearing rows, filled once the path variables exist
    let clear_base = program.equalities.len();
    for &b in dest_bus {
        program
            .equalities
            .push(LinRow::new(vec![(charging[b].expect("coupled bus"), -1.0)], 0.0));
    }
    let block = add_traffic(program, x0, network, graph, prob, None)?;
    for class in &block.ev {
        let row = &mut program.equalities[clear_base + class.dest];
        row.coeffs
            .extend(class.paths.iter().map(|(_, v)| (*v, class.energy)));
    }
    // start charging at the implied demand
    for (s, &b) in dest_bus.iter().enumerate() {
        let v = charging[b].expect("coupled bus");
        x0[v] = block
            .ev
            .iter()
            .filter(|c| c.dest == s)
            .map(|c| c.energy * TrafficBlock::q(c, x0))
            .sum::<f64>()
            .max(1e-2);
    }
    debug_assert!(block.vars().all(|v| x0[v] > 0.0));
    Ok((
        PowerBlock {
            theta,
            conventional,
            renewable,
            charging,
            balance_rows,
            capacity_rows,
            gen_rows,
            line_rows,
        },
        block,
    ))
}
