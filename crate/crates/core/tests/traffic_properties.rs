use proptest::prelude::*;
use ptequil_core::fixtures::{random_instance, three_node, ThreeNodeCase};
use ptequil_core::network::{RoadLink, TransportNetwork};
use ptequil_core::traffic::{self, od_travel_times, wardrop_violation, Pricing, TrafficProblem, TrafficSolution};

const TOL: f64 = 1e-9;
const MAX_ITER: usize = 20_000;

fn solve_fixed(network: &TransportNetwork, prices: &[f64]) -> TrafficSolution {
    solve_to(network, prices, TOL)
}

fn solve_to(network: &TransportNetwork, prices: &[f64], tol: f64) -> TrafficSolution {
    traffic::solve(
        &TrafficProblem {
            network,
            pricing: Pricing::Fixed(prices.to_vec()),
        },
        tol,
        MAX_ITER,
    )
    .unwrap()
}

fn bpr_integral(l: &RoadLink, v: f64) -> f64 {
    l.free_flow_time * (v + l.bpr_alpha * l.capacity / (l.bpr_beta + 1.0) * (v / l.capacity).powf(l.bpr_beta + 1.0))
}

fn golden(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn xlogx(q: f64) -> f64 {
    if q > 0.0 {
        q * q.ln() - q
    } else {
        0.0
    }
}

/// Brute-force minimizer of the three-node problem over its four paths,
/// in travel-time units. Returns (q to node 2, link flows, objective).
fn three_node_oracle(net: &TransportNetwork, prices: [f64; 2]) -> (f64, [f64; 4], f64) {
    let total = net.ev_origins[0].demand;
    let (b1, b2) = (net.beta_time, net.beta_cost);
    let links = &net.links;
    let e = [net.destinations[0].energy, net.destinations[1].energy];
    let a0 = [net.destinations[0].attractiveness, net.destinations[1].attractiveness];
    // paths: 1→2 direct, 1→3→2, 1→3 direct, 1→2→3
    let flows = |q2: f64, direct2: f64, direct3: f64| {
        let q3 = total - q2;
        [direct2 + (q3 - direct3), (q2 - direct2) + direct3, q2 - direct2, q3 - direct3]
    };
    let value = |q2: f64, direct2: f64, direct3: f64| {
        let q3 = total - q2;
        let v = flows(q2, direct2, direct3);
        let congestion: f64 = links.iter().zip(v).map(|(l, v)| bpr_integral(l, v)).sum();
        let entropy = xlogx(q2) - a0[0] * q2 + xlogx(q3) - a0[1] * q3;
        let cost = prices[0] * e[0] * q2 + prices[1] * e[1] * q3;
        congestion + entropy / b1 + b2 / b1 * cost
    };
    let inner = |q2: f64| {
        golden(0.0, total - q2, |c| golden(0.0, q2, |a| value(q2, a, c)).1).1
    };
    let (q2, best) = golden(0.0, total, inner);
    let (c, _) = golden(0.0, total - q2, |c| golden(0.0, q2, |a| value(q2, a, c)).1);
    let (a, _) = golden(0.0, q2, |a| value(q2, a, c));
    (q2, flows(q2, a, c), best)
}

fn ev_q(sol: &TrafficSolution, origin: u32, destination: u32) -> f64 {
    sol.ev_flows
        .iter()
        .filter(|f| f.origin == origin && f.destination == destination)
        .map(|f| f.flow)
        .sum()
}

#[test]
fn symmetric_prices_split_evenly() {
    let sys = three_node(ThreeNodeCase::Base);
    let sol = solve_fixed(&sys.transport, &[30.0, 30.0]);
    assert!((ev_q(&sol, 1, 2) - 25.0).abs() < 1e-6);
    assert!((ev_q(&sol, 1, 3) - 25.0).abs() < 1e-6);
}

#[test]
fn asymmetric_prices_match_brute_force() {
    for case in [ThreeNodeCase::Base, ThreeNodeCase::RoadCongestion] {
        let net = three_node(case).transport;
        for prices in [[30.0, 45.0], [50.0, 20.0], [0.0, 12.0]] {
            let sol = solve_to(&net, &prices, 1e-11);
            let (q2, v, best) = three_node_oracle(&net, prices);
            let ours = sol.objective * net.beta_cost / net.beta_time;
            assert!((ours - best).abs() <= 1e-4 * best.abs().max(1.0), "{case:?} {prices:?}: {ours} vs {best}");
            assert!((ev_q(&sol, 1, 2) - q2).abs() <= 1e-3, "{case:?} {prices:?}: q {} vs {q2}", ev_q(&sol, 1, 2));
            for (a, b) in sol.link_flows.iter().zip(v) {
                assert!((a - b).abs() <= 1e-3, "{case:?} {prices:?}: {:?} vs {v:?}", sol.link_flows);
            }
        }
    }
}

#[test]
fn both_routes_to_node_two_share_a_time_when_node_three_is_dear() {
    let net = three_node(ThreeNodeCase::Base).transport;
    let sol = solve_fixed(&net, &[0.0, 60.0]);
    let tt = od_travel_times(&sol)[&(1, 2)];
    let time = |k: usize| net.links[k].travel_time(sol.link_flows[k]);
    let od = sol.ev_flows.iter().find(|f| f.destination == 2).unwrap();
    assert!(od.link_flows[0] > 1e-3 && od.link_flows[2] > 1e-3, "{:?}", od.link_flows);
    assert!((time(0) - tt).abs() <= 1e-4 * tt);
    assert!((time(1) + time(2) - tt).abs() <= 1e-4 * tt);
}

fn feasibility(net: &TransportNetwork, sol: &TrafficSolution) -> Result<(), TestCaseError> {
    let incidence = net.incidence().unwrap();
    let mut sum = vec![0.0; net.links.len()];
    for f in sol.ev_flows.iter().chain(&sol.conventional_flows) {
        prop_assert!(f.link_flows.iter().all(|&x| x >= 0.0));
        let e = incidence.od_vector(f.origin, f.destination).unwrap();
        for (ax, ei) in incidence.apply(&f.link_flows).iter().zip(e) {
            prop_assert!((ax - f64::from(ei) * f.flow).abs() <= 1e-9 * f.flow.max(1.0));
        }
        for (s, x) in sum.iter_mut().zip(&f.link_flows) {
            *s += x;
        }
    }
    for (v, s) in sol.link_flows.iter().zip(&sum) {
        prop_assert!((v - s).abs() <= 1e-9 * v.max(1.0));
    }
    for o in &net.ev_origins {
        let q: f64 = sol.ev_flows.iter().filter(|f| f.origin == o.node).map(|f| f.flow).sum();
        prop_assert!((q - o.demand).abs() <= 1e-9 * o.demand.max(1.0));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fixed_price_equilibrium_properties(seed in 0u64..10_000, lo in 0.0f64..60.0, hi in 0.0f64..60.0) {
        let (sys, _) = random_instance(seed);
        let net = &sys.transport;
        let prices: Vec<f64> = (0..net.destinations.len()).map(|k| if k % 2 == 0 { lo } else { hi }).collect();
        let sol = solve_fixed(net, &prices);
        prop_assert!(sol.converged);
        feasibility(net, &sol)?;

        let violation = wardrop_violation(net, &sol, 1e-6).unwrap();
        prop_assert!(violation <= 1e-4, "wardrop {violation}");

        let tt = od_travel_times(&sol);
        for o in &net.ev_origins {
            let costs: Vec<f64> = net
                .destinations
                .iter()
                .zip(&prices)
                .map(|(d, &lam)| {
                    net.beta_time * tt[&(o.node, d.node)] + net.beta_cost * net.energy(o.node, d.node) * lam
                        - d.attractiveness
                })
                .collect();
            let shares = traffic::logit_split(&costs, 1.0).unwrap();
            for (d, share) in net.destinations.iter().zip(shares) {
                let got = ev_q(&sol, o.node, d.node) / o.demand;
                prop_assert!((got - share).abs() <= 1e-3, "share {got} vs {share}");
            }
        }
    }

    #[test]
    fn scaling_demand_and_capacity_scales_flows(seed in 0u64..10_000, k in 0.2f64..5.0) {
        let (sys, _) = random_instance(seed);
        let net = &sys.transport;
        let prices = vec![25.0; net.destinations.len()];
        let mut scaled = net.clone();
        for l in &mut scaled.links {
            l.capacity *= k;
        }
        for o in &mut scaled.ev_origins {
            o.demand *= k;
        }
        for od in &mut scaled.conventional_od {
            od.demand *= k;
        }
        let a = solve_to(net, &prices, 1e-11);
        let b = solve_to(&scaled, &prices, 1e-11);
        for (x, y) in a.link_flows.iter().zip(&b.link_flows) {
            prop_assert!((k * x - y).abs() <= 1e-4 * y.max(1.0), "{x} * {k} vs {y}");
        }
    }
}
