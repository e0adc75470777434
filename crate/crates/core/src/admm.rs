//! Scenario- and system-decomposed ADMM for the coupled equilibrium.
//!
//! Each iteration solves every scenario's power problem with the current
//! charging demand as target, then every scenario's traffic problem with the
//! new charging supply, averages investment into the consensus `z`, and
//! updates the multipliers of non-anticipativity (`γ`) and charging clearing
//! (`λ`).

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::dispatch::{self, ChargingTerm, DispatchError, DispatchProblem, DispatchSolution, InvestmentTerm};
use crate::network::{CoupledSystem, NetworkError};
use crate::scenario::ScenarioSet;
use crate::traffic::{Pricing, SolveOptions, TrafficError, TrafficModel, TrafficSolution};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdmmConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub traffic_tolerance: f64,
    pub traffic_max_iter: usize,
    pub qp_tolerance: f64,
    pub nonnegative_charging: bool,
    /// Re-solve both sides once at the consensus point after the loop.
    pub polish: bool,
    /// Residual-balancing penalty updates.
    pub adaptive_alpha: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 1e-3,
            max_iter: 500,
            traffic_tolerance: 1e-6,
            traffic_max_iter: 20_000,
            qp_tolerance: 1e-9,
            nonnegative_charging: false,
            polish: false,
            adaptive_alpha: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdmmError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("scenario {scenario}: {source}")]
    Dispatch { scenario: u32, source: DispatchError },
    #[error("scenario {scenario}: {source}")]
    Traffic { scenario: u32, source: TrafficError },
    #[error("gap {:.3e} above tolerance after {} iterations", .0.gap, .0.iterations)]
    NonConverged(Box<EquilibriumResult>),
}

impl AdmmError {
    /// Scenario id attached to a subproblem failure.
    pub fn scenario(&self) -> Option<u32> {
        match self {
            AdmmError::Dispatch { scenario, .. } | AdmmError::Traffic { scenario, .. } => Some(*scenario),
            _ => None,
        }
    }
}

/// Runs independent per-scenario jobs; implementations may run them in parallel
/// but must return results in index order.
pub trait ScenarioExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ScenarioExecutor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}

/// Wall-clock source for the trace.
pub trait Clock {
    fn elapsed_ms(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRow {
    pub iter: usize,
    pub gap1: f64,
    pub gap2: f64,
    pub gap: f64,
    pub expected_objective: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdmmState {
    pub iteration: usize,
    pub alpha: f64,
    /// Per scenario, in scenario-set order.
    pub dispatch: Vec<DispatchSolution>,
    pub traffic: Vec<TrafficSolution>,
    /// Charging energy demand per scenario and destination, MW.
    pub charging_demand: Vec<Vec<f64>>,
    /// Consensus investment per renewable bus, MW.
    pub consensus: Vec<f64>,
    /// Non-anticipativity multipliers `[scenario][renewable site]`, $/MW.
    pub gamma: Vec<Vec<f64>>,
    /// Charging-clearing multipliers `[scenario][destination]`, $/MWh.
    pub lambda: Vec<Vec<f64>>,
    pub gap1: f64,
    pub gap2: f64,
    pub gap: f64,
    /// Traffic solves that stopped at their iteration cap.
    pub traffic_cap_hits: usize,
}

impl AdmmState {
    /// Investment at each renewable site in scenario `k`.
    pub fn investment(&self, k: usize, sites: &[usize]) -> Vec<f64> {
        sites.iter().map(|&b| self.dispatch[k].investment[b]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EquilibriumResult {
    pub state: AdmmState,
    pub scenario_ids: Vec<u32>,
    pub probabilities: Vec<f64>,
    pub bus_ids: Vec<u32>,
    pub renewable_buses: Vec<u32>,
    pub destination_nodes: Vec<u32>,
    pub destination_buses: Vec<u32>,
    /// Expected locational price per bus.
    pub expected_prices: Vec<f64>,
    /// Expected charging price per destination.
    pub expected_charging_prices: Vec<f64>,
    /// `[scenario][bus]`.
    pub scenario_prices: Vec<Vec<f64>>,
    /// `[scenario][destination]`.
    pub scenario_charging_prices: Vec<Vec<f64>>,
    /// Consensus investment per renewable bus.
    pub investment: Vec<f64>,
    /// Expected vehicle hours.
    pub expected_travel_time: f64,
    /// Expected generation plus investment cost, $.
    pub expected_energy_cost: f64,
    /// Expected value of the combined objective, $.
    pub expected_objective: f64,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
    pub gap: f64,
}

/// `z_i = Σ_ξ P(ξ) u_{i,ξ}`.
pub fn consensus(probabilities: &[f64], u: &[Vec<f64>]) -> Vec<f64> {
    let sites = u.first().map_or(0, Vec::len);
    let mut z = vec![0.0; sites];
    for (p, row) in probabilities.iter().zip(u) {
        for (zi, ui) in z.iter_mut().zip(row) {
            *zi += p * ui;
        }
    }
    z
}

/// Multiplier updates with step `alpha`.
pub fn step3(
    gamma: &mut [Vec<f64>],
    lambda: &mut [Vec<f64>],
    u: &[Vec<f64>],
    z: &[f64],
    supply: &[Vec<f64>],
    demand: &[Vec<f64>],
    alpha: f64,
) {
    for (g, uk) in gamma.iter_mut().zip(u) {
        for ((gi, ui), zi) in g.iter_mut().zip(uk).zip(z) {
            *gi += alpha * (ui - zi);
        }
    }
    for (l, (pk, dk)) in lambda.iter_mut().zip(supply.iter().zip(demand)) {
        for ((li, pi), di) in l.iter_mut().zip(pk).zip(dk) {
            *li += alpha * (-pi + di);
        }
    }
}

/// `(gap_1, gap_2, max)` with `max(1, |·|)` denominators.
pub fn gaps(u: &[Vec<f64>], z: &[f64], supply: &[Vec<f64>], demand: &[Vec<f64>]) -> (f64, f64, f64) {
    let mut g1: f64 = 0.0;
    for uk in u {
        for (ui, zi) in uk.iter().zip(z) {
            g1 = g1.max((ui - zi).abs() / zi.abs().max(1.0));
        }
    }
    let mut g2: f64 = 0.0;
    for (pk, dk) in supply.iter().zip(demand) {
        for (pi, di) in pk.iter().zip(dk) {
            g2 = g2.max((-pi + di).abs() / pi.abs().max(1.0));
        }
    }
    (g1, g2, g1.max(g2))
}

/// Precompiled coupled instance driving the iterations.
pub struct Coordinator<'a, E> {
    pub system: &'a CoupledSystem,
    pub scenarios: &'a ScenarioSet,
    pub config: AdmmConfig,
    pub model: TrafficModel,
    executor: E,
    /// Bus index per destination.
    dest_bus: Vec<usize>,
    /// Bus index per renewable site.
    sites: Vec<usize>,
    probabilities: Vec<f64>,
}

impl<'a, E: ScenarioExecutor + Sync> Coordinator<'a, E> {
    pub fn new(
        system: &'a CoupledSystem,
        scenarios: &'a ScenarioSet,
        config: AdmmConfig,
        executor: E,
    ) -> Result<Self, AdmmError> {
        if !(config.alpha > 0.0) {
            return Err(AdmmError::Config("alpha must be positive"));
        }
        if !(config.epsilon > 0.0) {
            return Err(AdmmError::Config("epsilon must be positive"));
        }
        scenarios
            .check()
            .map_err(|_| AdmmError::Config("scenario set is not a probability measure"))?;
        let model = TrafficModel::new(&system.transport).map_err(|source| AdmmError::Traffic {
            scenario: scenarios.scenarios[0].id,
            source,
        })?;
        let dest_bus = system.destination_buses()?;
        let sites = system
            .power
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.renewable.is_some())
            .map(|(k, _)| k)
            .collect();
        Ok(Self {
            system,
            scenarios,
            config,
            model,
            executor,
            dest_bus,
            sites,
            probabilities: scenarios.probabilities(),
        })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn destination_buses(&self) -> &[usize] {
        &self.dest_bus
    }

    fn traffic_options(&self) -> SolveOptions {
        SolveOptions {
            tolerance: self.config.traffic_tolerance,
            max_iterations: self.config.traffic_max_iter,
        }
    }

    /// Cold start: zero multipliers and consensus, drivers split by logit at
    /// free-flow times, charging supply set to the implied demand.
    pub fn cold_start(&self) -> Result<AdmmState, AdmmError> {
        let nd = self.dest_bus.len();
        let start = match self.model.solve(
            &Pricing::Fixed(vec![0.0; nd]),
            &SolveOptions {
                tolerance: 0.0,
                max_iterations: 0,
            },
            None,
        ) {
            Ok(sol) => sol,
            Err(TrafficError::MaxIterationsExceeded(sol)) => *sol,
            Err(source) => {
                return Err(AdmmError::Traffic {
                    scenario: self.scenarios.scenarios[0].id,
                    source,
                })
            }
        };
        let demand = start.charging_demand(&self.system.transport);
        let ns = self.scenarios.len();
        Ok(AdmmState {
            iteration: 0,
            alpha: self.config.alpha,
            dispatch: Vec::new(),
            traffic: vec![start; ns],
            charging_demand: vec![demand; ns],
            consensus: vec![0.0; self.sites.len()],
            gamma: vec![vec![0.0; self.sites.len()]; ns],
            lambda: vec![vec![0.0; nd]; ns],
            gap1: f64::INFINITY,
            gap2: f64::INFINITY,
            gap: f64::INFINITY,
            traffic_cap_hits: 0,
        })
    }

    /// Cold start with seeded random consensus investment and charging
    /// multipliers; `γ` stays zero so its probability-weighted mean is zero.
    pub fn random_start(&self, seed: u64) -> Result<AdmmState, AdmmError> {
        let mut state = self.cold_start()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut draw = || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let price_scale = self
            .system
            .power
            .buses
            .iter()
            .filter_map(|b| b.generator.as_ref())
            .map(|g| g.marginal_cost(g.upper))
            .fold(1.0_f64, f64::max);
        let load = self.system.power.total_load().max(1.0);
        for z in &mut state.consensus {
            *z = draw() * load / self.sites.len().max(1) as f64;
        }
        for row in &mut state.lambda {
            for l in row.iter_mut() {
                *l = draw() * price_scale;
            }
        }
        Ok(state)
    }

    /// Solves every scenario's power problem against the current targets.
    pub fn step1(&self, state: &AdmmState) -> Result<Vec<DispatchSolution>, AdmmError> {
        let results = self.executor.map(self.scenarios.len(), |k| {
            let scenario = &self.scenarios.scenarios[k];
            let mut problem = DispatchProblem::plain(&self.system.power, scenario);
            problem.alpha = state.alpha;
            problem.nonnegative_charging = self.config.nonnegative_charging;
            for (j, &b) in self.sites.iter().enumerate() {
                problem.investment.insert(
                    self.system.power.buses[b].id,
                    InvestmentTerm::Penalty {
                        consensus: state.consensus[j],
                        dual: state.gamma[k][j],
                    },
                );
            }
            for (s, &b) in self.dest_bus.iter().enumerate() {
                problem.charging.insert(
                    self.system.power.buses[b].id,
                    ChargingTerm::Penalty {
                        dual: state.lambda[k][s],
                        target: state.charging_demand[k][s],
                    },
                );
            }
            dispatch::solve(&problem, self.config.qp_tolerance).map_err(|source| AdmmError::Dispatch {
                scenario: scenario.id,
                source,
            })
        });
        results.into_iter().collect()
    }

    /// Charging supply `p` per scenario and destination.
    pub fn supply(&self, dispatch: &[DispatchSolution]) -> Vec<Vec<f64>> {
        dispatch
            .iter()
            .map(|d| self.dest_bus.iter().map(|&b| d.charging[b]).collect())
            .collect()
    }

    /// Solves every scenario's traffic problem against the new supply and
    /// returns the solutions with the count of capped solves.
    pub fn step2(
        &self,
        state: &AdmmState,
        dispatch: &[DispatchSolution],
    ) -> Result<(Vec<TrafficSolution>, usize), AdmmError> {
        let supply = self.supply(dispatch);
        let options = self.traffic_options();
        let results = self.executor.map(self.scenarios.len(), |k| {
            let pricing = Pricing::Penalty {
                duals: state.lambda[k].clone(),
                supply: supply[k].clone(),
                weight: state.alpha,
            };
            match self.model.solve(&pricing, &options, state.traffic.get(k)) {
                Ok(sol) => Ok((sol, false)),
                Err(TrafficError::MaxIterationsExceeded(sol)) => Ok((*sol, true)),
                Err(source) => Err(AdmmError::Traffic {
                    scenario: self.scenarios.scenarios[k].id,
                    source,
                }),
            }
        });
        let mut out = Vec::with_capacity(results.len());
        let mut capped = 0;
        for r in results {
            let (sol, hit) = r?;
            capped += usize::from(hit);
            out.push(sol);
        }
        Ok((out, capped))
    }

    /// Expected combined objective without augmented terms.
    pub fn expected_objective(&self, state: &AdmmState) -> f64 {
        let zero = Pricing::Fixed(vec![0.0; self.dest_bus.len()]);
        self.probabilities
            .iter()
            .zip(state.dispatch.iter().zip(&state.traffic))
            .map(|(p, (d, t))| p * (d.energy_cost + self.model.evaluate(&zero, t)))
            .sum()
    }

    /// One full iteration: Steps 1 to 3 and the gaps.
    pub fn iterate(&self, state: &mut AdmmState) -> Result<(), AdmmError> {
        let dispatch = self.step1(state)?;
        let (traffic, capped) = self.step2(state, &dispatch)?;
        let u: Vec<Vec<f64>> = dispatch
            .iter()
            .map(|d| self.sites.iter().map(|&b| d.investment[b]).collect())
            .collect();
        let z = consensus(&self.probabilities, &u);
        let supply = self.supply(&dispatch);
        let demand: Vec<Vec<f64>> = traffic
            .iter()
            .map(|t| t.charging_demand(&self.system.transport))
            .collect();
        let alpha = state.alpha;
        step3(&mut state.gamma, &mut state.lambda, &u, &z, &supply, &demand, alpha);
        let (g1, g2, g) = gaps(&u, &z, &supply, &demand);

        if self.config.adaptive_alpha {
            let mut dual: f64 = 0.0;
            for (a, b) in z.iter().zip(&state.consensus) {
                dual = dual.max(alpha * (a - b).abs());
            }
            for (dk, old) in demand.iter().zip(&state.charging_demand) {
                for (a, b) in dk.iter().zip(old) {
                    dual = dual.max(alpha * (a - b).abs());
                }
            }
            let primal = g;
            if primal > 10.0 * dual {
                state.alpha = alpha * 2.0;
            } else if dual > 10.0 * primal {
                state.alpha = alpha / 2.0;
            }
        }

        state.dispatch = dispatch;
        state.traffic = traffic;
        state.charging_demand = demand;
        state.consensus = z;
        state.gap1 = g1;
        state.gap2 = g2;
        state.gap = g;
        state.traffic_cap_hits += capped;
        state.iteration += 1;
        Ok(())
    }

    /// Iterates from `state` until the gap drops to `epsilon` or `max_iter`.
    pub fn run_from<C: Clock>(&self, mut state: AdmmState, clock: &C) -> Result<EquilibriumResult, AdmmError> {
        let mut trace = Vec::new();
        loop {
            self.iterate(&mut state)?;
            trace.push(TraceRow {
                iter: state.iteration,
                gap1: state.gap1,
                gap2: state.gap2,
                gap: state.gap,
                expected_objective: self.expected_objective(&state),
                wall_ms: clock.elapsed_ms(),
            });
            if state.gap <= self.config.epsilon || state.iteration >= self.config.max_iter {
                break;
            }
        }
        let converged = state.gap <= self.config.epsilon;
        let prices = if self.config.polish {
            self.polish(&mut state)?
        } else {
            self.admm_prices(&state)
        };
        let result = self.result(state, prices, trace, converged);
        if converged {
            Ok(result)
        } else {
            Err(AdmmError::NonConverged(Box::new(result)))
        }
    }

    pub fn run<C: Clock>(&self, clock: &C) -> Result<EquilibriumResult, AdmmError> {
        self.run_from(self.cold_start()?, clock)
    }

    /// Per-scenario `(ρ, λ)` with `λ` the ADMM multiplier.
    fn admm_prices(&self, state: &AdmmState) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            state.dispatch.iter().map(|d| d.prices.clone()).collect(),
            state.lambda.clone(),
        )
    }

    /// Re-solves the power side with investment pinned at `z` and charging
    /// supply pinned at demand, then the traffic side at the resulting
    /// charging prices.
    fn polish(&self, state: &mut AdmmState) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), AdmmError> {
        let results = self.executor.map(self.scenarios.len(), |k| {
            let scenario = &self.scenarios.scenarios[k];
            let mut problem = DispatchProblem::plain(&self.system.power, scenario);
            problem.alpha = state.alpha;
            problem.nonnegative_charging = self.config.nonnegative_charging;
            for (j, &b) in self.sites.iter().enumerate() {
                problem
                    .investment
                    .insert(self.system.power.buses[b].id, InvestmentTerm::Fixed(state.consensus[j]));
            }
            for (s, &b) in self.dest_bus.iter().enumerate() {
                problem.charging.insert(
                    self.system.power.buses[b].id,
                    ChargingTerm::Fixed(state.charging_demand[k][s]),
                );
            }
            dispatch::solve(&problem, self.config.qp_tolerance).map_err(|source| AdmmError::Dispatch {
                scenario: scenario.id,
                source,
            })
        });
        let dispatch: Vec<DispatchSolution> = results.into_iter().collect::<Result<_, _>>()?;
        let lambda: Vec<Vec<f64>> = dispatch
            .iter()
            .map(|d| self.dest_bus.iter().map(|&b| d.charging_prices[b]).collect())
            .collect();
        let options = self.traffic_options();
        let traffic = self.executor.map(self.scenarios.len(), |k| {
            match self
                .model
                .solve(&Pricing::Fixed(lambda[k].clone()), &options, state.traffic.get(k))
            {
                Ok(sol) => Ok(sol),
                Err(TrafficError::MaxIterationsExceeded(sol)) => Ok(*sol),
                Err(source) => Err(AdmmError::Traffic {
                    scenario: self.scenarios.scenarios[k].id,
                    source,
                }),
            }
        });
        state.traffic = traffic.into_iter().collect::<Result<_, _>>()?;
        state.charging_demand = state
            .traffic
            .iter()
            .map(|t| t.charging_demand(&self.system.transport))
            .collect();
        let rho = dispatch.iter().map(|d| d.prices.clone()).collect();
        state.dispatch = dispatch;
        state.lambda = lambda.clone();
        Ok((rho, lambda))
    }

    fn result(
        &self,
        state: AdmmState,
        (rho, lambda): (Vec<Vec<f64>>, Vec<Vec<f64>>),
        trace: Vec<TraceRow>,
        converged: bool,
    ) -> EquilibriumResult {
        let p = &self.probabilities;
        let nb = self.system.power.buses.len();
        let nd = self.dest_bus.len();
        let mut expected_prices = vec![0.0; nb];
        let mut expected_charging = vec![0.0; nd];
        for (k, pk) in p.iter().enumerate() {
            for i in 0..nb {
                expected_prices[i] += pk * rho[k][i];
            }
            for s in 0..nd {
                expected_charging[s] += pk * lambda[k][s];
            }
        }
        let expected_travel_time = p
            .iter()
            .zip(&state.traffic)
            .map(|(pk, t)| pk * t.total_travel_time(&self.system.transport))
            .sum();
        let expected_energy_cost = p.iter().zip(&state.dispatch).map(|(pk, d)| pk * d.energy_cost).sum();
        let expected_objective = self.expected_objective(&state);
        let power = &self.system.power;
        EquilibriumResult {
            scenario_ids: self.scenarios.scenarios.iter().map(|s| s.id).collect(),
            probabilities: p.clone(),
            bus_ids: power.buses.iter().map(|b| b.id).collect(),
            renewable_buses: self.sites.iter().map(|&b| power.buses[b].id).collect(),
            destination_nodes: self.system.transport.destinations.iter().map(|d| d.node).collect(),
            destination_buses: self.dest_bus.iter().map(|&b| power.buses[b].id).collect(),
            expected_prices,
            expected_charging_prices: expected_charging,
            scenario_prices: rho,
            scenario_charging_prices: lambda,
            investment: state.consensus.clone(),
            expected_travel_time,
            expected_energy_cost,
            expected_objective,
            iterations: state.iteration,
            gap: state.gap,
            trace,
            converged,
            state,
        }
    }
}

/// Runs the coordinator from a cold start with the sequential executor.
pub fn run(
    system: &CoupledSystem,
    scenarios: &ScenarioSet,
    config: &AdmmConfig,
) -> Result<EquilibriumResult, AdmmError> {
    Coordinator::new(system, scenarios, config.clone(), Sequential)?.run(&NoClock)
}

/// Probability-weighted mean of `γ` per site.
pub fn dual_mean(probabilities: &[f64], gamma: &[Vec<f64>]) -> Vec<f64> {
    consensus(probabilities, gamma)
}

/// Prices keyed by bus id for one scenario of a result.
pub fn scenario_price_map(result: &EquilibriumResult, k: usize) -> BTreeMap<u32, f64> {
    result
        .bus_ids
        .iter()
        .copied()
        .zip(result.scenario_prices[k].iter().copied())
        .collect()
}
