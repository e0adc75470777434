use std::collections::BTreeMap;

use proptest::prelude::*;
use ptequil_core::dispatch::{self, assemble, solve_raw, ChargingTerm, DispatchProblem};
use ptequil_core::fixtures::{random_instance, three_node, ThreeNodeCase};
use ptequil_core::network::PowerNetwork;
use ptequil_core::qp::Qp;
use ptequil_core::scenario::Scenario;

const TOL: f64 = 1e-9;

fn unit_scenario(power: &PowerNetwork) -> Scenario {
    Scenario {
        id: 1,
        factors: power
            .buses
            .iter()
            .filter(|b| b.renewable.is_some())
            .map(|b| (b.id, 1.0))
            .collect(),
        probability: 1.0,
    }
}

/// Random instance with its charging buses pinned at `targets` MW.
fn charged_problem<'a>(power: &'a PowerNetwork, scenario: &'a Scenario, buses: &[u32], target: f64) -> DispatchProblem<'a> {
    let mut p = DispatchProblem::plain(power, scenario);
    p.charging = buses.iter().map(|&b| (b, ChargingTerm::Fixed(target))).collect();
    p
}

fn dual_value(qp: &Qp, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    // k − ½xᵀPx − bᵀy − hᵀz, valid at a stationary point
    let mut quad = 0.0;
    for &(i, j, p) in &qp.quadratic {
        quad += if i == j { 0.5 * p * x[i] * x[i] } else { p * x[i] * x[j] };
    }
    let by: f64 = qp.equalities.iter().zip(y).map(|(r, y)| r.rhs * y).sum();
    let hz: f64 = qp.inequalities.iter().zip(z).map(|(r, z)| r.rhs * z).sum();
    qp.constant - quad - by - hz
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn balance_slackness_and_duality(seed in 0u64..10_000, target in 0.0f64..20.0) {
        let (sys, _) = random_instance(seed);
        let scenario = unit_scenario(&sys.power);
        let buses: Vec<u32> = sys.coupling.iter().map(|c| c.bus).collect();
        let problem = charged_problem(&sys.power, &scenario, &buses, target);
        let instance = assemble(&problem).unwrap();
        let raw = solve_raw(&instance, TOL).unwrap();
        let sol = instance.interpret(&raw);

        let load: f64 = sys.power.total_load();
        let net: f64 = (0..sol.bus_ids.len())
            .map(|k| sol.demand[k] - sol.charging[k] - sys.power.buses[k].load)
            .sum();
        prop_assert!(net.abs() <= 1e-6 * load, "balance {net}");

        let scale = 1.0 + raw.objective.abs();
        for (row, &z) in instance.qp.inequalities.iter().zip(&raw.z) {
            let slack = row.rhs - row.dot(&raw.x);
            prop_assert!(z >= -TOL * scale);
            prop_assert!(slack >= -1e-6 * scale, "slack {slack}");
            prop_assert!((z * slack).abs() <= TOL * scale * 10.0, "z {z} slack {slack}");
        }

        let dual = dual_value(&instance.qp, &raw.x, &raw.y, &raw.z);
        prop_assert!((raw.objective - dual).abs() <= 10.0 * TOL * scale, "primal {} dual {dual}", raw.objective);
    }

    #[test]
    fn load_perturbation_moves_cost_by_price(seed in 0u64..10_000, which in 0usize..4) {
        let (sys, _) = random_instance(seed);
        let scenario = unit_scenario(&sys.power);
        let k = which % sys.power.buses.len();
        let h = 1e-4;
        let base = dispatch::solve(&DispatchProblem::plain(&sys.power, &scenario), 1e-10).unwrap();
        let mut bumped = sys.power.clone();
        bumped.buses[k].load += h;
        let up = dispatch::solve(&DispatchProblem::plain(&bumped, &scenario), 1e-10).unwrap();
        let fd = (up.objective - base.objective) / h;
        let rho = base.prices[k];
        // O(h) curvature plus solver noise on the objective
        prop_assert!((fd - rho).abs() <= 1e-3 * rho.abs().max(1.0), "fd {fd} rho {rho}");
    }
}

#[test]
fn tightening_a_line_never_lowers_the_top_price() {
    let base = three_node(ThreeNodeCase::Base).power;
    let scenario = unit_scenario(&base);
    for line in 0..base.branches.len() {
        let mut last = f64::NEG_INFINITY;
        for limit in [200.0, 150.0, 100.0, 75.0, 50.0, 40.0, 30.0] {
            let mut power = base.clone();
            power.branches[line].limit = limit;
            let Ok(sol) = dispatch::solve(&DispatchProblem::plain(&power, &scenario), TOL) else {
                continue;
            };
            let top = sol.prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(top >= last - 1e-6, "line {line} limit {limit}: {top} < {last}");
            last = top;
        }
    }
}

#[test]
fn line_congestion_raises_prices_at_charging_buses() {
    let scenario = unit_scenario(&three_node(ThreeNodeCase::Base).power);
    let open = three_node(ThreeNodeCase::Base).power;
    let tight = three_node(ThreeNodeCase::LineCongestion).power;
    let mut charging = BTreeMap::new();
    charging.insert(2, ChargingTerm::Fixed(25.0));
    charging.insert(3, ChargingTerm::Fixed(25.0));
    let solve = |power: &PowerNetwork| {
        let mut p = DispatchProblem::plain(power, &scenario);
        p.charging = charging.clone();
        dispatch::solve(&p, TOL).unwrap()
    };
    let a = solve(&open);
    let b = solve(&tight);
    assert!(b.prices[2] > b.prices[1]);
    assert!(b.prices[1] > a.prices[1] && b.prices[2] > a.prices[2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_budget_means_no_investment(seed in 0u64..10_000) {
        let (mut sys, _) = random_instance(seed);
        sys.power.budget = 0.0;
        let scenario = unit_scenario(&sys.power);
        let sol = dispatch::solve(&DispatchProblem::plain(&sys.power, &scenario), TOL).unwrap();
        for (&u, &s) in sol.investment.iter().zip(&sol.renewable) {
            prop_assert!(u.abs() <= 1e-6 && s.abs() <= 1e-6, "u {u} s {s}");
        }
    }
}
