//! Best-response regrets and the equilibrium certificate.

use alloc::vec;
use alloc::vec::Vec;

use super::ipm::{self, IpmOptions, LinRow, Program, Term};
use super::{add_traffic, branch_ends, travel_objective, OracleError, PriceSet, SystemState, SIZE_GUARD};
use crate::network::CoupledSystem;
use crate::scenario::ScenarioSet;
use crate::traffic::wardrop_violation;

/// Market participants with their own optimization problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Agent {
    Investor,
    Generators,
    Iso,
    Drivers,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CertifyTolerance {
    /// Absolute regret bound per agent ($).
    pub regret: f64,
    /// Relative clearing residual bound.
    pub clearing: f64,
    /// Relative path-time excess bound.
    pub wardrop: f64,
}

impl CertifyTolerance {
    /// `rel` times the cost scale for regrets, `rel` for the relative checks
    /// (Wardrop floored at 1e-4).
    pub fn relative(rel: f64, cost_scale: f64) -> Self {
        Self {
            regret: rel * cost_scale.abs().max(1.0),
            clearing: rel,
            wardrop: rel.max(1e-4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EquilibriumCertificate {
    pub investor_regret: f64,
    pub generator_regret: f64,
    pub iso_regret: f64,
    pub driver_regret: f64,
    /// Max `|d − gS − gC| / max(1, |d|)` over buses and scenarios.
    pub supply_residual: f64,
    /// Max `|p − Σ e q| / max(1, |p|)` over destinations and scenarios, for
    /// the point and for the drivers' best response.
    pub charging_residual: f64,
    pub wardrop_violation: f64,
    pub tolerance: CertifyTolerance,
    pub pass: bool,
}

fn check_dims(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    state: &SystemState,
    prices: &PriceSet,
) -> Result<(), OracleError> {
    let n = scenarios.len();
    let nb = system.power.buses.len();
    let nd = system.transport.destinations.len();
    if state.dispatch.len() != n || state.traffic.len() != n || prices.rho.len() != n || prices.lambda.len() != n {
        return Err(OracleError::Dimension("scenario count"));
    }
    if state.investment.len() != nb
        || prices.rho.iter().any(|r| r.len() != nb)
        || state.dispatch.iter().any(|d| d.prices.len() != nb || d.flows.len() != system.power.branches.len())
    {
        return Err(OracleError::Dimension("bus or branch count"));
    }
    if prices.lambda.iter().any(|l| l.len() != nd) {
        return Err(OracleError::Dimension("destination count"));
    }
    if state
        .traffic
        .iter()
        .any(|t| t.link_flows.len() != system.transport.links.len())
    {
        return Err(OracleError::Dimension("link count"));
    }
    Ok(())
}

/// Expected total system cost of a point: investment, generation and the
/// travel objective at zero charging price.
pub fn expected_cost(system: &CoupledSystem, scenarios: &ScenarioSet, state: &SystemState) -> f64 {
    let power = &system.power;
    let invest: f64 = power
        .buses
        .iter()
        .zip(&state.investment)
        .filter_map(|(b, &u)| b.renewable.as_ref().map(|r| r.investment_cost(u)))
        .sum();
    let mut total = invest;
    for (k, s) in scenarios.scenarios.iter().enumerate() {
        let d = &state.dispatch[k];
        let mut op = 0.0;
        for (i, b) in power.buses.iter().enumerate() {
            if let Some(g) = &b.generator {
                op += g.cost(d.conventional[i]);
            }
            if let Some(r) = &b.renewable {
                op += r.operating_cost(d.renewable[i]);
            }
        }
        total += s.probability * (op + travel_objective(&system.transport, &state.traffic[k], None));
    }
    total
}

fn investor_regret(system: &CoupledSystem, scenarios: &ScenarioSet, state: &SystemState, prices: &PriceSet) -> f64 {
    let power = &system.power;
    let sites: Vec<usize> = (0..power.buses.len())
        .filter(|&i| power.buses[i].renewable.is_some())
        .collect();
    if sites.is_empty() {
        return 0.0;
    }
    // expected margin per MW of capacity, then a budget-constrained concave
    // maximization in closed form with bisection on the budget multiplier
    let mut margin = vec![0.0; sites.len()];
    let mut point = 0.0;
    for (k, s) in scenarios.scenarios.iter().enumerate() {
        for (j, &i) in sites.iter().enumerate() {
            let spec = power.buses[i].renewable.as_ref().expect("site");
            let net = prices.rho[k][i] - spec.operate_linear;
            margin[j] += s.probability * net.max(0.0) * s.factor(power.buses[i].id);
            point += s.probability * net * state.dispatch[k].renewable[i];
        }
    }
    let profit = |u: &[f64]| -> f64 {
        sites
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let spec = power.buses[i].renewable.as_ref().expect("site");
                margin[j] * u[j] - spec.investment_cost(u[j])
            })
            .sum()
    };
    let best_at = |mu: f64| -> Vec<f64> {
        sites
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let spec = power.buses[i].renewable.as_ref().expect("site");
                let a = spec.invest_quadratic.max(1e-9);
                ((margin[j] - spec.invest_linear - mu * spec.unit_capital_cost) / (2.0 * a)).max(0.0)
            })
            .collect()
    };
    let spend = |u: &[f64]| -> f64 {
        sites
            .iter()
            .zip(u)
            .map(|(&i, v)| power.buses[i].renewable.as_ref().expect("site").unit_capital_cost * v)
            .sum()
    };
    let mut u = best_at(0.0);
    if spend(&u) > power.budget {
        let (mut lo, mut hi) = (0.0, 1.0);
        while spend(&best_at(hi)) > power.budget && hi < 1e15 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(&best_at(mid)) > power.budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        u = best_at(hi);
    }
    let current: Vec<f64> = sites.iter().map(|&i| state.investment[i]).collect();
    let invest_point: f64 = sites
        .iter()
        .zip(&current)
        .map(|(&i, &v)| power.buses[i].renewable.as_ref().expect("site").investment_cost(v))
        .sum();
    profit(&u) - (point - invest_point)
}

fn generator_regret(system: &CoupledSystem, scenarios: &ScenarioSet, state: &SystemState, prices: &PriceSet) -> f64 {
    let mut regret = 0.0;
    for (k, s) in scenarios.scenarios.iter().enumerate() {
        for (i, bus) in system.power.buses.iter().enumerate() {
            let Some(g) = &bus.generator else { continue };
            let rho = prices.rho[k][i];
            let profit = |x: f64| rho * x - g.cost(x);
            let best = if g.cost_quadratic > 0.0 {
                let x = ((rho - g.cost_linear) / (2.0 * g.cost_quadratic)).clamp(g.lower, g.upper);
                profit(x)
            } else if rho > g.cost_linear {
                profit(g.upper)
            } else {
                profit(g.lower)
            };
            regret += s.probability * (best - profit(state.dispatch[k].conventional[i]));
        }
    }
    regret
}

/// ISO: buys supply at `ρ`, sells charging at `λ`, routes DC flows. Supply is
/// boxed by physical availability and charging by the largest possible EV
/// energy demand so the linear problem stays bounded off equilibrium.
fn iso_regret(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    state: &SystemState,
    prices: &PriceSet,
) -> Result<f64, OracleError> {
    let power = &system.power;
    let network = &system.transport;
    let ends = branch_ends(power)?;
    let dest_bus = system.destination_buses()?;
    let reference = power
        .reference_bus()
        .ok_or_else(|| OracleError::Invalid("no reference bus".into()))?;
    let max_energy = network
        .ev_origins
        .iter()
        .flat_map(|o| network.destinations.iter().map(|d| network.energy(o.node, d.node)))
        .fold(0.0_f64, f64::max);
    let p_max = 1.5 * network.ev_origins.iter().map(|o| o.demand.max(0.0)).sum::<f64>() * max_energy + 1.0;
    let nb = power.buses.len();
    let mut regret = 0.0;
    for (k, s) in scenarios.scenarios.iter().enumerate() {
        let rho = &prices.rho[k];
        let lam = &prices.lambda[k];
        let d = &state.dispatch[k];
        let mut prog = Program::default();
        let mut x0 = Vec::new();
        let theta: Vec<usize> = (0..nb)
            .map(|_| {
                prog.n += 1;
                x0.push(0.0);
                prog.n - 1
            })
            .collect();
        let mut supply = vec![None; nb];
        for (i, bus) in power.buses.iter().enumerate() {
            let mut cap = bus.generator.as_ref().map_or(0.0, |g| g.upper);
            if bus.renewable.is_some() {
                cap += s.factor(bus.id) * state.investment[i];
            }
            let cap = cap.max(d.demand[i]) * 1.01 + 1e-6;
            if bus.has_supply() && cap.is_finite() {
                let v = prog.n;
                prog.n += 1;
                x0.push(0.5 * cap);
                prog.nonnegative.push(v);
                prog.inequalities.push(LinRow::new(vec![(v, 1.0)], cap));
                prog.terms.push(Term::Quadratic { var: v, a: 0.0, b: rho[i] });
                supply[i] = Some(v);
            } else if bus.has_supply() {
                return Err(OracleError::Invalid("unbounded supply capacity".into()));
            }
        }
        let mut charge = vec![None; nb];
        for (sd, &b) in dest_bus.iter().enumerate() {
            let v = prog.n;
            prog.n += 1;
            x0.push(0.5 * p_max);
            prog.nonnegative.push(v);
            prog.inequalities.push(LinRow::new(vec![(v, 1.0)], p_max));
            prog.terms.push(Term::Quadratic {
                var: v,
                a: 0.0,
                b: -lam[sd],
            });
            charge[b] = Some(v);
        }
        for (br, &(a, b)) in power.branches.iter().zip(&ends) {
            if br.limit.is_finite() {
                let row = vec![(theta[a], br.susceptance), (theta[b], -br.susceptance)];
                prog.inequalities.push(LinRow::new(row.clone(), br.limit));
                prog.inequalities
                    .push(LinRow::new(row.iter().map(|&(j, c)| (j, -c)).collect(), br.limit));
            }
        }
        for (i, bus) in power.buses.iter().enumerate() {
            let mut coeffs = vec![(0usize, 0.0); 0];
            for (br, &(a, b)) in power.branches.iter().zip(&ends) {
                let sign = if a == i {
                    1.0
                } else if b == i {
                    -1.0
                } else {
                    continue;
                };
                coeffs.push((theta[a], sign * br.susceptance));
                coeffs.push((theta[b], -sign * br.susceptance));
            }
            if let Some(v) = supply[i] {
                coeffs.push((v, -1.0));
            }
            if let Some(v) = charge[i] {
                coeffs.push((v, 1.0));
            }
            prog.equalities.push(LinRow::new(coeffs, -bus.load));
        }
        prog.equalities.push(LinRow::new(vec![(theta[reference], 1.0)], 0.0));
        let sol = ipm::solve(&prog, &x0, &IpmOptions::default()).map_err(|_| OracleError::AgentInfeasible(Agent::Iso))?;
        let best = -sol.objective;
        let mut point = 0.0;
        for (sd, &b) in dest_bus.iter().enumerate() {
            point += lam[sd] * d.charging[b];
        }
        for i in 0..nb {
            if power.buses[i].has_supply() {
                point -= rho[i] * d.demand[i];
            }
        }
        regret += s.probability * (best - point);
    }
    Ok(regret)
}

/// Drivers' best response per scenario at fixed `λ`: `(regret, charging demand)`.
fn driver_response(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    state: &SystemState,
    prices: &PriceSet,
) -> Result<(f64, Vec<Vec<f64>>), OracleError> {
    let network = &system.transport;
    let graph = network.compile()?;
    let mut regret = 0.0;
    let mut demand = Vec::new();
    for (k, s) in scenarios.scenarios.iter().enumerate() {
        let lam = &prices.lambda[k];
        let mut prog = Program::default();
        let mut x0 = Vec::new();
        let block = add_traffic(&mut prog, &mut x0, network, &graph, 1.0, Some(lam))?;
        if prog.n > SIZE_GUARD {
            return Err(OracleError::SizeGuardExceeded {
                variables: prog.n,
                limit: SIZE_GUARD,
            });
        }
        let sol =
            ipm::solve(&prog, &x0, &IpmOptions::default()).map_err(|_| OracleError::AgentInfeasible(Agent::Drivers))?;
        let point = travel_objective(network, &state.traffic[k], Some(lam));
        regret += s.probability * (point - sol.objective);
        let mut per_dest = vec![0.0; network.destinations.len()];
        for c in &block.ev {
            per_dest[c.dest] += c.energy * c.paths.iter().map(|(_, v)| sol.x[*v]).sum::<f64>();
        }
        demand.push(per_dest);
    }
    Ok((regret, demand))
}

/// Best response payoff minus payoff at the point, expected over scenarios ($).
pub fn best_response_regret(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    agent: Agent,
    prices: &PriceSet,
    state: &SystemState,
) -> Result<f64, OracleError> {
    check_dims(system, scenarios, state, prices)?;
    match agent {
        Agent::Investor => Ok(investor_regret(system, scenarios, state, prices)),
        Agent::Generators => Ok(generator_regret(system, scenarios, state, prices)),
        Agent::Iso => iso_regret(system, scenarios, state, prices),
        Agent::Drivers => driver_response(system, scenarios, state, prices).map(|r| r.0),
    }
}

/// Checks every agent's optimality at the given prices, market clearing and
/// Wardrop conditions.
pub fn certify(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    state: &SystemState,
    prices: &PriceSet,
    tolerance: CertifyTolerance,
) -> Result<EquilibriumCertificate, OracleError> {
    check_dims(system, scenarios, state, prices)?;
    let investor_regret = investor_regret(system, scenarios, state, prices);
    let generator_regret = generator_regret(system, scenarios, state, prices);
    let iso_regret = iso_regret(system, scenarios, state, prices)?;
    let (driver_regret, best_demand) = driver_response(system, scenarios, state, prices)?;

    let power = &system.power;
    let dest_bus = system.destination_buses()?;
    let mut supply_residual = 0.0_f64;
    let mut charging_residual = 0.0_f64;
    let mut wardrop = 0.0_f64;
    for k in 0..scenarios.len() {
        let d = &state.dispatch[k];
        for (i, bus) in power.buses.iter().enumerate() {
            if bus.has_supply() {
                let r = (d.demand[i] - d.conventional[i] - d.renewable[i]).abs() / d.demand[i].abs().max(1.0);
                supply_residual = supply_residual.max(r);
            }
        }
        let point_demand = state.traffic[k].charging_demand(&system.transport);
        for (s, &b) in dest_bus.iter().enumerate() {
            let p = d.charging[b];
            let scale = p.abs().max(1.0);
            charging_residual = charging_residual
                .max((p - point_demand[s]).abs() / scale)
                .max((p - best_demand[k][s]).abs() / scale);
        }
        let w = wardrop_violation(&system.transport, &state.traffic[k], 1e-6)
            .map_err(|e| OracleError::Invalid(alloc::format!("{e}")))?;
        wardrop = wardrop.max(w);
    }
    let pass = investor_regret <= tolerance.regret
        && generator_regret <= tolerance.regret
        && iso_regret <= tolerance.regret
        && driver_regret <= tolerance.regret
        && supply_residual <= tolerance.clearing
        && charging_residual <= tolerance.clearing
        && wardrop <= tolerance.wardrop;
    Ok(EquilibriumCertificate {
        investor_regret,
        generator_regret,
        iso_regret,
        driver_regret,
        supply_residual,
        charging_residual,
        wardrop_violation: wardrop,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{three_node, three_node_scenarios, ThreeNodeCase};
    use crate::oracle::{monolithic_solve, OracleOptions};
    use approx::assert_relative_eq;

    fn solved() -> (CoupledSystem, ScenarioSet, SystemState, PriceSet, f64) {
        let sys = three_node(ThreeNodeCase::LineCongestion);
        let sc = three_node_scenarios(2, 11);
        let sol = monolithic_solve(&sys, &sc, &OracleOptions::default()).unwrap();
        (sys, sc, sol.state, sol.prices, sol.expected_objective)
    }

    #[test]
    fn oracle_output_certifies() {
        let (sys, sc, state, prices, cost) = solved();
        let cert = certify(&sys, &sc, &state, &prices, CertifyTolerance::relative(1e-3, cost)).unwrap();
        assert!(cert.pass, "{cert:?}");
        for r in [cert.investor_regret, cert.generator_regret, cert.iso_regret, cert.driver_regret] {
            assert!(r.abs() <= 1e-5 * cost, "{cert:?}");
        }
    }

    #[test]
    fn perturbed_charging_price_is_detected() {
        let (sys, sc, state, mut prices, cost) = solved();
        let base = certify(&sys, &sc, &state, &prices, CertifyTolerance::relative(1e-3, cost)).unwrap();
        for l in &mut prices.lambda {
            l[0] *= 1.1;
        }
        let cert = certify(&sys, &sc, &state, &prices, CertifyTolerance::relative(1e-3, cost)).unwrap();
        assert!(cert.driver_regret > base.driver_regret + 1e-3);
        assert!(cert.charging_residual > base.charging_residual + 1e-3);
    }

    #[test]
    fn generator_forced_to_capacity() {
        let (sys, sc, mut state, prices, _) = solved();
        // bus 2 generator: cost 0.1 g² + 25 g, so at price ρ the best output is
        // g* = (ρ − 25) / 0.2 and profit ρ g − C(g)
        let k = 0;
        let i = 1;
        let rho = prices.rho[k][i];
        let base = best_response_regret(&sys, &sc, Agent::Generators, &prices, &state).unwrap();
        let upper = 400.0;
        state.dispatch[k].conventional[i] = upper;
        let g_star = ((rho - 25.0) / 0.2).clamp(0.0, upper);
        let profit = |g: f64| rho * g - 0.1 * g * g - 25.0 * g;
        let expected = sc.scenarios[k].probability * (profit(g_star) - profit(upper));
        let regret = best_response_regret(&sys, &sc, Agent::Generators, &prices, &state).unwrap();
        assert!(expected > 0.0);
        assert_relative_eq!(regret - base, expected, max_relative = 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let (sys, sc, mut state, prices, cost) = solved();
        state.traffic.pop();
        assert!(matches!(
            certify(&sys, &sc, &state, &prices, CertifyTolerance::relative(1e-3, cost)),
            Err(OracleError::Dimension(_))
        ));
    }
}
