//! Per-scenario power-side problem: renewable investment and operation,
//! conventional dispatch and DC power flow, with augmented terms that tie
//! investment to a consensus value and charging supply to a demand target.
//!
//! Locational prices are the multipliers of the supply balance `d = gS + gC`
//! (equivalently of the nodal flow balance), signed so that `ρ_i` is the cost
//! saved by one extra MW of free generation at bus `i`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::network::PowerNetwork;
use crate::qp::{self, Qp, QpError, QpOptions, QpSolution, Row, Scaling};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("power network has no reference bus")]
    MissingReferenceBus,
    #[error("bus {0} is not part of the power network")]
    UnknownBus(u32),
    #[error("bus {0} carries an investment term but has no renewable site")]
    NotRenewable(u32),
    #[error("penalty weight must be positive, got {0}")]
    BadPenalty(f64),
    #[error("branch {0} references an unknown bus")]
    DanglingBranch(u32),
    #[error("load at bus {bus} cannot be served (shortfall {shortfall:.6} MW)")]
    Infeasible { bus: u32, shortfall: f64 },
    #[error("numerical breakdown in the dispatch solver: {0}")]
    NumericalBreakdown(QpError),
}

/// How the investment decision at a renewable bus enters the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InvestmentTerm {
    /// Chosen freely against its own cost.
    Free,
    /// `γ̂ (u − z) + α/2 (u − z)²` added to the cost.
    Penalty { consensus: f64, dual: f64 },
    /// Pinned to the given capacity.
    Fixed(f64),
}

/// How charging supply at a coupled bus enters the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ChargingTerm {
    /// `λ̂ (−p + target) + α/2 (−p + target)²` added to the cost.
    Penalty { dual: f64, target: f64 },
    /// `p = target`; the multiplier is reported as the charging price.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct DispatchProblem<'a> {
    pub power: &'a PowerNetwork,
    pub scenario: &'a Scenario,
    /// Keyed by bus id; renewable buses not listed are `Free`.
    pub investment: BTreeMap<u32, InvestmentTerm>,
    /// Keyed by bus id; buses not listed have no charging supply variable.
    pub charging: BTreeMap<u32, ChargingTerm>,
    pub alpha: f64,
    pub nonnegative_charging: bool,
}

impl<'a> DispatchProblem<'a> {
    /// Plain economic dispatch with free investment and no charging.
    pub fn plain(power: &'a PowerNetwork, scenario: &'a Scenario) -> Self {
        Self {
            power,
            scenario,
            investment: BTreeMap::new(),
            charging: BTreeMap::new(),
            alpha: 1.0,
            nonnegative_charging: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Angle,
    Flow,
    Conventional,
    Investment,
    Renewable,
    Demand,
    Charging,
}

/// Variable and row positions inside an assembled instance.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub theta: Vec<usize>,
    pub flow: Vec<usize>,
    pub conventional: Vec<Option<usize>>,
    pub investment: Vec<Option<usize>>,
    pub renewable: Vec<Option<usize>>,
    pub demand: Vec<Option<usize>>,
    pub charging: Vec<Option<usize>>,
    pub kinds: Vec<VarKind>,
    // equality rows
    pub balance_rows: Vec<usize>,
    pub supply_rows: Vec<Option<usize>>,
    pub charging_fix_rows: Vec<Option<usize>>,
    pub investment_fix_rows: Vec<Option<usize>>,
    // inequality rows
    pub capacity_rows: Vec<Option<usize>>,
    pub budget_row: Option<usize>,
    pub gen_upper_rows: Vec<Option<usize>>,
    pub gen_lower_rows: Vec<Option<usize>>,
    pub line_upper_rows: Vec<Option<usize>>,
    pub line_lower_rows: Vec<Option<usize>>,
}

/// An assembled convex QP with its scaling and layout.
#[derive(Debug, Clone)]
pub struct DispatchQp {
    pub qp: Qp,
    pub scaling: Scaling,
    pub layout: Layout,
    pub bus_ids: Vec<u32>,
    pub branch_ids: Vec<u32>,
    /// Charging terms per bus index, for price recovery.
    charging: Vec<Option<ChargingTerm>>,
    alpha: f64,
    /// Energy cost `Σ C^{S,I} + C^{S,O} + C^C` as (quadratic, linear, constant).
    energy_cost: (Vec<(usize, f64)>, Vec<(usize, f64)>, f64),
    base_load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DispatchSolution {
    pub bus_ids: Vec<u32>,
    pub branch_ids: Vec<u32>,
    /// rad, per bus.
    pub theta: Vec<f64>,
    /// MW, per branch, from → to positive.
    pub flows: Vec<f64>,
    /// MW per bus; zero where the component is absent.
    pub conventional: Vec<f64>,
    pub investment: Vec<f64>,
    pub renewable: Vec<f64>,
    pub demand: Vec<f64>,
    pub charging: Vec<f64>,
    /// $/MWh per bus.
    pub prices: Vec<f64>,
    /// $/MWh per bus; zero where there is no charging supply.
    pub charging_prices: Vec<f64>,
    /// Scarcity rent of available renewable capacity, per bus.
    pub capacity_duals: Vec<f64>,
    pub budget_dual: f64,
    pub generator_upper_duals: Vec<f64>,
    pub generator_lower_duals: Vec<f64>,
    /// Signed congestion rent per branch (upper minus lower multiplier).
    pub line_duals: Vec<f64>,
    /// Multipliers of pinned investment, per bus.
    pub investment_duals: Vec<f64>,
    /// Full objective including augmented terms, $.
    pub objective: f64,
    /// Generation and investment cost only, $.
    pub energy_cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl DispatchSolution {
    /// Locational price per bus id.
    pub fn price_map(&self) -> BTreeMap<u32, f64> {
        self.bus_ids.iter().copied().zip(self.prices.iter().copied()).collect()
    }

    /// Supply at a bus, `gS + gC`.
    pub fn supply(&self, k: usize) -> f64 {
        self.conventional[k] + self.renewable[k]
    }
}

/// Locational prices of a solved dispatch, keyed by bus id.
pub fn extract_prices(solution: &DispatchSolution) -> BTreeMap<u32, f64> {
    solution.price_map()
}

pub fn assemble(problem: &DispatchProblem<'_>) -> Result<DispatchQp, DispatchError> {
    let power = problem.power;
    if !(problem.alpha > 0.0) {
        return Err(DispatchError::BadPenalty(problem.alpha));
    }
    let reference = power.reference_bus().ok_or(DispatchError::MissingReferenceBus)?;
    let nb = power.buses.len();
    let nl = power.branches.len();
    let alpha = problem.alpha;
    for (&bus, term) in &problem.investment {
        let k = power.bus_index(bus).ok_or(DispatchError::UnknownBus(bus))?;
        if power.buses[k].renewable.is_none() && *term != InvestmentTerm::Free {
            return Err(DispatchError::NotRenewable(bus));
        }
    }
    let mut charging_terms = vec![None; nb];
    for (&bus, term) in &problem.charging {
        let k = power.bus_index(bus).ok_or(DispatchError::UnknownBus(bus))?;
        charging_terms[k] = Some(*term);
    }

    let mut layout = Layout::default();
    let mut n = 0;
    let mut push = |kind: VarKind, layout: &mut Layout| {
        layout.kinds.push(kind);
        n += 1;
        n - 1
    };
    for _ in 0..nb {
        let j = push(VarKind::Angle, &mut layout);
        layout.theta.push(j);
    }
    for _ in 0..nl {
        let j = push(VarKind::Flow, &mut layout);
        layout.flow.push(j);
    }
    for (k, bus) in power.buses.iter().enumerate() {
        let g = bus.generator.as_ref().map(|_| push(VarKind::Conventional, &mut layout));
        let (u, s) = match bus.renewable {
            Some(_) => (
                Some(push(VarKind::Investment, &mut layout)),
                Some(push(VarKind::Renewable, &mut layout)),
            ),
            None => (None, None),
        };
        let d = bus.has_supply().then(|| push(VarKind::Demand, &mut layout));
        let p = charging_terms[k].map(|_| push(VarKind::Charging, &mut layout));
        layout.conventional.push(g);
        layout.investment.push(u);
        layout.renewable.push(s);
        layout.demand.push(d);
        layout.charging.push(p);
    }
    let n = layout.kinds.len();

    let mut quadratic = Vec::new();
    let mut linear = vec![0.0; n];
    let mut constant = 0.0;
    let mut cost_quad = Vec::new();
    let mut cost_lin = Vec::new();
    let mut cost_const = 0.0;
    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();

    // costs and augmented terms
    for (k, bus) in power.buses.iter().enumerate() {
        if let (Some(spec), Some(g)) = (&bus.generator, layout.conventional[k]) {
            cost_quad.push((g, spec.cost_quadratic));
            cost_lin.push((g, spec.cost_linear));
            cost_const += spec.cost_constant;
        }
        if let (Some(spec), Some(u), Some(s)) = (&bus.renewable, layout.investment[k], layout.renewable[k]) {
            cost_quad.push((u, spec.invest_quadratic));
            cost_lin.push((u, spec.invest_linear));
            cost_lin.push((s, spec.operate_linear));
            match problem.investment.get(&bus.id).copied().unwrap_or(InvestmentTerm::Free) {
                InvestmentTerm::Free => {}
                InvestmentTerm::Penalty { consensus, dual } => {
                    // γ̂(u − z) + α/2 (u − z)²
                    quadratic.push((u, u, alpha));
                    linear[u] += dual - alpha * consensus;
                    constant += -dual * consensus + 0.5 * alpha * consensus * consensus;
                }
                InvestmentTerm::Fixed(value) => {
                    layout.investment_fix_rows.resize(nb, None);
                    layout.investment_fix_rows[k] = Some(equalities.len());
                    equalities.push(Row::new(vec![(u, 1.0)], value));
                }
            }
        }
        if let (Some(term), Some(p)) = (charging_terms[k], layout.charging[k]) {
            match term {
                ChargingTerm::Penalty { dual, target } => {
                    // λ̂(−p + T) + α/2 (p − T)²
                    quadratic.push((p, p, alpha));
                    linear[p] += -dual - alpha * target;
                    constant += dual * target + 0.5 * alpha * target * target;
                }
                ChargingTerm::Fixed(value) => {
                    layout.charging_fix_rows.resize(nb, None);
                    layout.charging_fix_rows[k] = Some(equalities.len());
                    equalities.push(Row::new(vec![(p, 1.0)], value));
                }
            }
        }
    }
    for &(j, c) in &cost_quad {
        if c != 0.0 {
            quadratic.push((j, j, 2.0 * c));
        }
    }
    for &(j, c) in &cost_lin {
        linear[j] += c;
    }
    constant += cost_const;
    layout.investment_fix_rows.resize(nb, None);
    layout.charging_fix_rows.resize(nb, None);

    // B(θ_from − θ_to) − f = 0
    let mut net_out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for (l, br) in power.branches.iter().enumerate() {
        let a = power.bus_index(br.from_bus).ok_or(DispatchError::DanglingBranch(br.id))?;
        let b = power.bus_index(br.to_bus).ok_or(DispatchError::DanglingBranch(br.id))?;
        let f = layout.flow[l];
        equalities.push(Row::new(
            vec![
                (layout.theta[a], br.susceptance),
                (layout.theta[b], -br.susceptance),
                (f, -1.0),
            ],
            0.0,
        ));
        net_out[a].push((f, 1.0));
        net_out[b].push((f, -1.0));
    }
    // Σ_out f − Σ_in f − d + p = −l
    for (k, bus) in power.buses.iter().enumerate() {
        let mut coeffs = core::mem::take(&mut net_out[k]);
        if let Some(d) = layout.demand[k] {
            coeffs.push((d, -1.0));
        }
        if let Some(p) = layout.charging[k] {
            coeffs.push((p, 1.0));
        }
        layout.balance_rows.push(equalities.len());
        equalities.push(Row::new(coeffs, -bus.load));
    }
    // d − gS − gC = 0
    for k in 0..nb {
        let Some(d) = layout.demand[k] else {
            layout.supply_rows.push(None);
            continue;
        };
        let mut coeffs = vec![(d, 1.0)];
        if let Some(s) = layout.renewable[k] {
            coeffs.push((s, -1.0));
        }
        if let Some(g) = layout.conventional[k] {
            coeffs.push((g, -1.0));
        }
        layout.supply_rows.push(Some(equalities.len()));
        equalities.push(Row::new(coeffs, 0.0));
    }
    equalities.push(Row::new(vec![(layout.theta[reference], 1.0)], 0.0));

    // gS − ξ u <= 0, −u <= 0, −gS <= 0
    let mut budget = Vec::new();
    for (k, bus) in power.buses.iter().enumerate() {
        if let (Some(spec), Some(u), Some(s)) = (&bus.renewable, layout.investment[k], layout.renewable[k]) {
            let xi = problem.scenario.factor(bus.id);
            layout.capacity_rows.push(Some(inequalities.len()));
            inequalities.push(Row::new(vec![(s, 1.0), (u, -xi)], 0.0));
            inequalities.push(Row::new(vec![(u, -1.0)], 0.0));
            inequalities.push(Row::new(vec![(s, -1.0)], 0.0));
            if spec.unit_capital_cost != 0.0 {
                budget.push((u, spec.unit_capital_cost));
            }
        } else {
            layout.capacity_rows.push(None);
        }
    }
    if !budget.is_empty() {
        layout.budget_row = Some(inequalities.len());
        inequalities.push(Row::new(budget, power.budget));
    }
    for (k, bus) in power.buses.iter().enumerate() {
        if let (Some(spec), Some(g)) = (&bus.generator, layout.conventional[k]) {
            layout.gen_upper_rows.push(Some(inequalities.len()));
            inequalities.push(Row::new(vec![(g, 1.0)], spec.upper));
            layout.gen_lower_rows.push(Some(inequalities.len()));
            inequalities.push(Row::new(vec![(g, -1.0)], -spec.lower));
        } else {
            layout.gen_upper_rows.push(None);
            layout.gen_lower_rows.push(None);
        }
    }
    for (l, br) in power.branches.iter().enumerate() {
        if br.limit.is_finite() {
            let f = layout.flow[l];
            layout.line_upper_rows.push(Some(inequalities.len()));
            inequalities.push(Row::new(vec![(f, 1.0)], br.limit));
            layout.line_lower_rows.push(Some(inequalities.len()));
            inequalities.push(Row::new(vec![(f, -1.0)], br.limit));
        } else {
            layout.line_upper_rows.push(None);
            layout.line_lower_rows.push(None);
        }
    }
    if problem.nonnegative_charging {
        for p in layout.charging.iter().flatten() {
            inequalities.push(Row::new(vec![(*p, -1.0)], 0.0));
        }
    }

    let scaling = scaling_for(problem, &layout);
    Ok(DispatchQp {
        qp: Qp {
            n,
            quadratic,
            linear,
            constant,
            equalities,
            inequalities,
        },
        scaling,
        layout,
        bus_ids: power.buses.iter().map(|b| b.id).collect(),
        branch_ids: power.branches.iter().map(|b| b.id).collect(),
        charging: charging_terms,
        alpha,
        energy_cost: (cost_quad, cost_lin, cost_const),
        base_load: power.buses.iter().map(|b| b.load).collect(),
    })
}

/// Power base from line limits, capacities and load; cost base from the
/// largest marginal cost at that power level.
fn scaling_for(problem: &DispatchProblem<'_>, layout: &Layout) -> Scaling {
    let power = problem.power;
    let mut base = power.total_load().abs();
    let mut max_b: f64 = 0.0;
    for br in &power.branches {
        if br.limit.is_finite() {
            base = base.max(br.limit);
        }
        max_b = max_b.max(br.susceptance.abs());
    }
    for bus in &power.buses {
        if let Some(g) = &bus.generator {
            base = base.max(g.upper);
        }
    }
    let base = base.max(1.0);
    let mut marginal: f64 = 1.0;
    for bus in &power.buses {
        if let Some(g) = &bus.generator {
            marginal = marginal.max(g.marginal_cost(g.upper).abs());
        }
        if let Some(r) = &bus.renewable {
            marginal = marginal.max(r.invest_linear.abs()).max(r.operate_linear.abs());
        }
    }
    let angle = if max_b > 0.0 { base / max_b } else { 1.0 };
    let var = layout
        .kinds
        .iter()
        .map(|k| if *k == VarKind::Angle { angle } else { base })
        .collect();
    Scaling {
        var,
        objective: marginal * base,
    }
}

/// Solves an assembled instance and returns the raw primal-dual point.
pub fn solve_raw(instance: &DispatchQp, tol: f64) -> Result<QpSolution, DispatchError> {
    let options = QpOptions {
        tolerance: tol,
        ..QpOptions::default()
    };
    match qp::solve_scaled(&instance.qp, &instance.scaling, &options) {
        Ok(sol) => Ok(sol),
        Err(err) => Err(diagnose(instance, err)),
    }
}

pub fn solve_qp(instance: &DispatchQp, tol: f64) -> Result<DispatchSolution, DispatchError> {
    let raw = solve_raw(instance, tol)?;
    Ok(instance.interpret(&raw))
}

/// Assemble and solve in one call.
pub fn solve(problem: &DispatchProblem<'_>, tol: f64) -> Result<DispatchSolution, DispatchError> {
    solve_qp(&assemble(problem)?, tol)
}

impl DispatchQp {
    pub fn interpret(&self, raw: &QpSolution) -> DispatchSolution {
        let l = &self.layout;
        let nb = self.bus_ids.len();
        let pick = |v: &Option<usize>| v.map_or(0.0, |j| raw.x[j]);
        let eq = |v: &Option<usize>| v.map_or(0.0, |r| raw.y[r]);
        let ineq = |v: &Option<usize>| v.map_or(0.0, |r| raw.z[r]);
        let prices: Vec<f64> = l.balance_rows.iter().map(|&r| raw.y[r]).collect();
        let charging: Vec<f64> = l.charging.iter().map(pick).collect();
        let charging_prices = (0..nb)
            .map(|k| match self.charging[k] {
                None => 0.0,
                Some(ChargingTerm::Penalty { dual, target }) => dual + self.alpha * (target - charging[k]),
                Some(ChargingTerm::Fixed(_)) => -eq(&l.charging_fix_rows[k]),
            })
            .collect();
        let (cq, cl, c0) = &self.energy_cost;
        let energy_cost = c0
            + cq.iter().map(|&(j, c)| c * raw.x[j] * raw.x[j]).sum::<f64>()
            + cl.iter().map(|&(j, c)| c * raw.x[j]).sum::<f64>();
        DispatchSolution {
            bus_ids: self.bus_ids.clone(),
            branch_ids: self.branch_ids.clone(),
            theta: l.theta.iter().map(|&j| raw.x[j]).collect(),
            flows: l.flow.iter().map(|&j| raw.x[j]).collect(),
            conventional: l.conventional.iter().map(pick).collect(),
            investment: l.investment.iter().map(pick).collect(),
            renewable: l.renewable.iter().map(pick).collect(),
            demand: l.demand.iter().map(pick).collect(),
            charging,
            prices,
            charging_prices,
            capacity_duals: l.capacity_rows.iter().map(ineq).collect(),
            budget_dual: ineq(&l.budget_row),
            generator_upper_duals: l.gen_upper_rows.iter().map(ineq).collect(),
            generator_lower_duals: l.gen_lower_rows.iter().map(ineq).collect(),
            line_duals: l
                .line_upper_rows
                .iter()
                .zip(&l.line_lower_rows)
                .map(|(u, d)| ineq(u) - ineq(d))
                .collect(),
            investment_duals: l.investment_fix_rows.iter().map(eq).collect(),
            objective: raw.objective,
            energy_cost,
            kkt_residual: raw.residual,
            iterations: raw.iterations,
        }
    }
}

/// Elastic phase-1 on the nodal balances: minimise total imbalance. A
/// positive optimum proves infeasibility and names the worst bus.
fn diagnose(instance: &DispatchQp, err: QpError) -> DispatchError {
    let base = &instance.qp;
    let mut qp = Qp {
        n: base.n,
        quadratic: Vec::new(),
        linear: vec![0.0; base.n],
        constant: 0.0,
        equalities: base.equalities.clone(),
        inequalities: base.inequalities.clone(),
    };
    let mut var = instance.scaling.var.clone();
    let mut slacks = Vec::new();
    for &r in &instance.layout.balance_rows {
        let plus = qp.n;
        let minus = qp.n + 1;
        qp.n += 2;
        qp.linear.extend([1.0, 1.0]);
        var.extend([var[0].max(1.0), var[0].max(1.0)]);
        qp.equalities[r].coeffs.extend([(plus, 1.0), (minus, -1.0)]);
        qp.inequalities.push(Row::new(vec![(plus, -1.0)], 0.0));
        qp.inequalities.push(Row::new(vec![(minus, -1.0)], 0.0));
        slacks.push((plus, minus));
    }
    let power_base = instance
        .scaling
        .var
        .iter()
        .zip(&instance.layout.kinds)
        .find(|(_, k)| **k != VarKind::Angle)
        .map_or(1.0, |(s, _)| *s);
    for (v, kind) in var.iter_mut().zip(instance.layout.kinds.iter()) {
        if *kind != VarKind::Angle {
            *v = power_base;
        }
    }
    for v in var.iter_mut().skip(base.n) {
        *v = power_base;
    }
    let scaling = Scaling {
        var,
        objective: power_base,
    };
    let Ok(sol) = qp::solve_scaled(&qp, &scaling, &QpOptions::default()) else {
        return DispatchError::NumericalBreakdown(err);
    };
    let load: f64 = instance.base_load.iter().map(|l| l.abs()).sum::<f64>().max(1.0);
    if sol.objective <= 1e-6 * load {
        return DispatchError::NumericalBreakdown(err);
    }
    let (k, shortfall) = slacks
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| (k, sol.x[a] + sol.x[b]))
        .fold((0, f64::NEG_INFINITY), |m, v| if v.1 > m.1 { v } else { m });
    DispatchError::Infeasible {
        bus: instance.bus_ids[k],
        shortfall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{GeneratorSpec, PowerBranch, PowerBus, RenewableSiteSpec};
    use approx::assert_relative_eq;

    const TOL: f64 = 1e-9;

    pub(crate) fn generator(c2: f64, c1: f64, upper: f64) -> GeneratorSpec {
        GeneratorSpec {
            lower: 0.0,
            upper,
            cost_quadratic: c2,
            cost_linear: c1,
            cost_constant: 0.0,
        }
    }

    fn one_bus() -> PowerNetwork {
        let mut bus = PowerBus::new(1, 10.0);
        bus.generator = Some(generator(1.0, 0.0, 100.0));
        bus.is_reference = true;
        PowerNetwork {
            buses: vec![bus],
            branches: vec![],
            budget: 0.0,
        }
    }

    fn two_bus(limit: f64) -> PowerNetwork {
        let mut b1 = PowerBus::new(1, 0.0);
        b1.generator = Some(generator(0.01, 10.0, 200.0));
        b1.is_reference = true;
        let mut b2 = PowerBus::new(2, 50.0);
        b2.generator = Some(generator(0.05, 30.0, 200.0));
        PowerNetwork {
            buses: vec![b1, b2],
            branches: vec![PowerBranch {
                id: 1,
                from_bus: 1,
                to_bus: 2,
                susceptance: 1.0,
                limit,
            }],
            budget: 0.0,
        }
    }

    fn three_bus(limit13: f64) -> PowerNetwork {
        let mut b1 = PowerBus::new(1, 50.0);
        b1.generator = Some(generator(0.01, 10.0, 400.0));
        b1.is_reference = true;
        let mut b2 = PowerBus::new(2, 50.0);
        b2.generator = Some(generator(0.05, 30.0, 400.0));
        let mut b3 = PowerBus::new(3, 50.0);
        b3.generator = Some(generator(0.05, 35.0, 400.0));
        let br = |id, a, b, limit| PowerBranch {
            id,
            from_bus: a,
            to_bus: b,
            susceptance: 10.0,
            limit,
        };
        PowerNetwork {
            buses: vec![b1, b2, b3],
            branches: vec![br(1, 1, 2, 200.0), br(2, 2, 3, 200.0), br(3, 1, 3, limit13)],
            budget: 0.0,
        }
    }

    fn empty_scenario() -> Scenario {
        Scenario {
            id: 1,
            factors: BTreeMap::new(),
            probability: 1.0,
        }
    }

    #[test]
    fn one_bus_assembly_variables() {
        let net = one_bus();
        let sc = empty_scenario();
        let mut problem = DispatchProblem::plain(&net, &sc);
        problem.charging.insert(1, ChargingTerm::Fixed(0.0));
        let inst = assemble(&problem).unwrap();
        let kinds: Vec<VarKind> = inst
            .layout
            .kinds
            .iter()
            .copied()
            .filter(|k| *k != VarKind::Angle)
            .collect();
        assert_eq!(kinds, vec![VarKind::Conventional, VarKind::Demand, VarKind::Charging]);
        // d = gC and −d + p = −10
        let supply = &inst.qp.equalities[inst.layout.supply_rows[0].unwrap()];
        assert_eq!(supply.rhs, 0.0);
        assert_eq!(supply.coeffs.len(), 2);
        let balance = &inst.qp.equalities[inst.layout.balance_rows[0]];
        assert_eq!(balance.rhs, -10.0);
    }

    #[test]
    fn two_bus_line_rows() {
        let net = two_bus(5.0);
        let sc = empty_scenario();
        let inst = assemble(&DispatchProblem::plain(&net, &sc)).unwrap();
        let f = inst.layout.flow[0];
        let row = &inst.qp.equalities[0];
        assert_eq!(row.coeffs, vec![(0, 1.0), (1, -1.0), (f, -1.0)]);
        let up = &inst.qp.inequalities[inst.layout.line_upper_rows[0].unwrap()];
        let lo = &inst.qp.inequalities[inst.layout.line_lower_rows[0].unwrap()];
        assert_eq!((up.coeffs[0], up.rhs), ((f, 1.0), 5.0));
        assert_eq!((lo.coeffs[0], lo.rhs), ((f, -1.0), 5.0));
    }

    #[test]
    fn missing_reference_bus() {
        let mut net = one_bus();
        net.buses[0].is_reference = false;
        let sc = empty_scenario();
        assert_eq!(
            assemble(&DispatchProblem::plain(&net, &sc)).unwrap_err(),
            DispatchError::MissingReferenceBus
        );
    }

    #[test]
    fn one_bus_quadratic_cost() {
        let net = one_bus();
        let sc = empty_scenario();
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        assert_relative_eq!(sol.conventional[0], 10.0, epsilon = 1e-6);
        assert_relative_eq!(sol.prices[0], 20.0, epsilon = 1e-6);
        assert_relative_eq!(sol.energy_cost, 100.0, epsilon = 1e-5);
    }

    #[test]
    fn uncongested_prices_equal() {
        let net = two_bus(1000.0);
        let sc = empty_scenario();
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        // bus 1 serves everything: marginal 0.02·50 + 10 = 11 < 30
        assert_relative_eq!(sol.conventional[0], 50.0, epsilon = 1e-6);
        assert_relative_eq!(sol.prices[0], 11.0, epsilon = 1e-6);
        assert!((sol.prices[0] - sol.prices[1]).abs() <= 10.0 * 1e-6);
    }

    #[test]
    fn congested_line_separates_prices() {
        let net = two_bus(20.0);
        let sc = empty_scenario();
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        assert_relative_eq!(sol.flows[0], 20.0, epsilon = 1e-6);
        assert_relative_eq!(sol.conventional[1], 30.0, epsilon = 1e-6);
        // bus 2 marginal: 0.1·30 + 30 = 33; bus 1 marginal: 0.02·20 + 10 = 10.4
        assert_relative_eq!(sol.prices[1], 33.0, epsilon = 1e-5);
        assert_relative_eq!(sol.prices[0], 10.4, epsilon = 1e-5);
        assert_relative_eq!(sol.line_duals[0], 33.0 - 10.4, epsilon = 1e-5);
    }

    #[test]
    fn zero_budget_blocks_investment() {
        let mut net = one_bus();
        net.buses[0].renewable = Some(RenewableSiteSpec {
            invest_quadratic: 0.1,
            invest_linear: 0.0,
            operate_linear: 0.0,
            unit_capital_cost: 1.0,
        });
        let sc = Scenario {
            id: 1,
            factors: BTreeMap::from([(1, 1.0)]),
            probability: 1.0,
        };
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        assert!(sol.investment[0].abs() < 1e-6);
        assert!(sol.renewable[0].abs() < 1e-6);
        net.budget = 100.0;
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        assert!(sol.investment[0] > 1.0);
    }

    #[test]
    fn renewable_scarcity_rent() {
        // free operation, binding availability: ρ equals the capacity multiplier
        let mut net = one_bus();
        net.budget = 1e6;
        net.buses[0].renewable = Some(RenewableSiteSpec {
            invest_quadratic: 1.0,
            invest_linear: 0.0,
            operate_linear: 0.0,
            unit_capital_cost: 1.0,
        });
        let sc = Scenario {
            id: 1,
            factors: BTreeMap::from([(1, 0.5)]),
            probability: 1.0,
        };
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        assert_relative_eq!(sol.capacity_duals[0], sol.prices[0], epsilon = 1e-6);
        // investment stationarity: 2u = 0.5 ρ
        assert_relative_eq!(2.0 * sol.investment[0], 0.5 * sol.prices[0], epsilon = 1e-5);
    }

    #[test]
    fn interior_generator_price_is_marginal_cost() {
        let net = three_bus(200.0);
        let sc = empty_scenario();
        let sol = solve(&DispatchProblem::plain(&net, &sc), TOL).unwrap();
        for (k, bus) in net.buses.iter().enumerate() {
            let g = sol.conventional[k];
            let spec = bus.generator.as_ref().unwrap();
            if g > spec.lower + 1e-3 && g < spec.upper - 1e-3 {
                assert_relative_eq!(sol.prices[k], spec.marginal_cost(g), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn penalty_price_matches_bus_price() {
        let net = three_bus(200.0);
        let sc = empty_scenario();
        let mut problem = DispatchProblem::plain(&net, &sc);
        problem.charging.insert(2, ChargingTerm::Penalty { dual: 5.0, target: 20.0 });
        let sol = solve(&problem, TOL).unwrap();
        assert_relative_eq!(sol.charging_prices[1], sol.prices[1], epsilon = 1e-5);
        problem.charging.insert(2, ChargingTerm::Fixed(20.0));
        let sol = solve(&problem, TOL).unwrap();
        assert_relative_eq!(sol.charging[1], 20.0, epsilon = 1e-7);
        assert_relative_eq!(sol.charging_prices[1], sol.prices[1], epsilon = 1e-5);
    }

    #[test]
    fn infeasible_load_names_bus() {
        let mut net = two_bus(5.0);
        net.buses[1].generator = None;
        let sc = empty_scenario();
        match solve(&DispatchProblem::plain(&net, &sc), TOL) {
            Err(DispatchError::Infeasible { bus, shortfall }) => {
                assert_eq!(bus, 2);
                assert!(shortfall > 1.0);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
