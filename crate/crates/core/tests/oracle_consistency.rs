use ptequil_core::fixtures::{random_instance, three_node, three_node_scenarios, ThreeNodeCase};
use ptequil_core::oracle::{certify, expected_cost, monolithic_solve, CertifyTolerance, OracleOptions};

#[test]
fn oracle_output_certifies_itself() {
    for seed in 0..6 {
        let (sys, scenarios) = random_instance(seed);
        let sol = monolithic_solve(&sys, &scenarios, &OracleOptions::default()).unwrap();
        let tol = CertifyTolerance::relative(1e-3, sol.expected_objective);
        let cert = certify(&sys, &scenarios, &sol.state, &sol.prices, tol).unwrap();
        assert!(cert.pass, "seed {seed}: {cert:?}");
    }
}

#[test]
fn shifted_prices_fail_certification() {
    let sys = three_node(ThreeNodeCase::Base);
    let scenarios = three_node_scenarios(2, 5);
    let sol = monolithic_solve(&sys, &scenarios, &OracleOptions::default()).unwrap();
    let mut prices = sol.prices.clone();
    for lam in &mut prices.lambda {
        lam[0] += 25.0;
    }
    let tol = CertifyTolerance::relative(1e-3, sol.expected_objective);
    let cert = certify(&sys, &scenarios, &sol.state, &prices, tol).unwrap();
    assert!(!cert.pass);
}

#[test]
fn reported_cost_matches_the_point() {
    let (sys, scenarios) = random_instance(3);
    let sol = monolithic_solve(&sys, &scenarios, &OracleOptions::default()).unwrap();
    let cost = expected_cost(&sys, &scenarios, &sol.state);
    assert!((cost - sol.expected_objective).abs() <= 1e-6 * cost.abs().max(1.0), "{cost} vs {}", sol.expected_objective);
}
