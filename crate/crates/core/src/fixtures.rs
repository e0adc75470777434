//! Small synthetic coupled systems used by tests, examples and the CLI.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::network::{
    ChargingDestination, CoupledSystem, Coupling, EvOrigin, GeneratorSpec, OdDemand, PowerBranch, PowerBus,
    PowerNetwork, RenewableSiteSpec, RoadLink, TransportNetwork,
};
use crate::scenario::{sample_uniform, ScenarioSet};

/// Variants of the three-node system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreeNodeCase {
    /// Base case.
    Base,
    /// Road link 1→3 capacity 10 → 5.
    RoadCongestion,
    /// Transmission line 1-3 limit 200 → 50.
    LineCongestion,
}

pub const THREE_NODE_SEED: u64 = 2021;
pub const THREE_NODE_SCENARIOS: usize = 10;

/// Three road nodes with 50 EVs leaving node 1 to charge at node 2 or 3, on
/// three buses carrying 50 MW of base load each.
pub fn three_node(case: ThreeNodeCase) -> CoupledSystem {
    let cap13 = if case == ThreeNodeCase::RoadCongestion { 5.0 } else { 10.0 };
    let transport = TransportNetwork {
        nodes: vec![1, 2, 3],
        links: vec![
            RoadLink::new(1, 1, 2, 1.0, 10.0),
            RoadLink::new(2, 1, 3, 1.0, cap13),
            RoadLink::new(3, 3, 2, 0.5, 10.0),
            RoadLink::new(4, 2, 3, 0.5, 10.0),
        ],
        ev_origins: vec![EvOrigin { node: 1, demand: 50.0 }],
        destinations: vec![
            ChargingDestination {
                node: 2,
                attractiveness: 0.0,
                energy: 1.0,
            },
            ChargingDestination {
                node: 3,
                attractiveness: 0.0,
                energy: 1.0,
            },
        ],
        conventional_od: vec![],
        energy_overrides: vec![],
        beta_time: 1.0,
        beta_cost: 0.1,
    };
    let site = RenewableSiteSpec {
        invest_quadratic: 0.2,
        invest_linear: 2.0,
        operate_linear: 0.0,
        unit_capital_cost: 1.0,
    };
    let mut b1 = PowerBus::new(1, 50.0);
    b1.is_reference = true;
    b1.generator = Some(GeneratorSpec {
        lower: 0.0,
        upper: 400.0,
        cost_quadratic: 0.02,
        cost_linear: 10.0,
        cost_constant: 0.0,
    });
    let mut b2 = PowerBus::new(2, 50.0);
    b2.generator = Some(GeneratorSpec {
        lower: 0.0,
        upper: 400.0,
        cost_quadratic: 0.1,
        cost_linear: 25.0,
        cost_constant: 0.0,
    });
    b2.renewable = Some(site.clone());
    let mut b3 = PowerBus::new(3, 50.0);
    b3.generator = b2.generator.clone();
    b3.renewable = Some(site);
    let limit13 = if case == ThreeNodeCase::LineCongestion { 50.0 } else { 200.0 };
    let line = |id, from_bus, to_bus, limit| PowerBranch {
        id,
        from_bus,
        to_bus,
        susceptance: 10.0,
        limit,
    };
    CoupledSystem {
        transport,
        power: PowerNetwork {
            buses: vec![b1, b2, b3],
            branches: vec![line(1, 1, 2, 200.0), line(2, 2, 3, 200.0), line(3, 1, 3, limit13)],
            budget: 40.0,
        },
        coupling: vec![Coupling { road_node: 2, bus: 2 }, Coupling { road_node: 3, bus: 3 }],
    }
}

/// Capacity-factor scenarios for the three-node system.
pub fn three_node_scenarios(n: usize, seed: u64) -> ScenarioSet {
    sample_uniform(&[2, 3], n, 0.5, 1.5, seed).expect("valid interval")
}

struct Draw(Xoshiro256PlusPlus);

impl Draw {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

/// Random small coupled system with strictly convex costs: 3 or 4 road
/// nodes on a bidirectional ring, 2 or 3 buses each with a generator, one
/// or two renewable sites, 1 to 3 scenarios.
pub fn random_instance(seed: u64) -> (CoupledSystem, ScenarioSet) {
    let mut d = Draw(Xoshiro256PlusPlus::seed_from_u64(seed));
    let n_nodes = d.int(3, 4);
    let nodes: Vec<u32> = (1..=n_nodes as u32).collect();
    let mut links = Vec::new();
    let mut id = 1;
    for k in 0..n_nodes {
        let a = nodes[k];
        let b = nodes[(k + 1) % n_nodes];
        for (t, h) in [(a, b), (b, a)] {
            let mut l = RoadLink::new(id, t, h, d.range(0.5, 2.0), d.range(5.0, 20.0));
            l.bpr_alpha = d.range(0.1, 0.5);
            links.push(l);
            id += 1;
        }
    }
    if n_nodes == 4 {
        let mut l = RoadLink::new(id, 1, 3, d.range(1.0, 3.0), d.range(5.0, 20.0));
        l.bpr_alpha = 0.15;
        links.push(l);
    }
    let n_dest = 2;
    let dest_nodes: Vec<u32> = nodes[n_nodes - n_dest..].to_vec();
    let energy = d.range(0.5, 1.5);
    let destinations = dest_nodes
        .iter()
        .map(|&node| ChargingDestination {
            node,
            attractiveness: d.range(-0.5, 0.5),
            energy,
        })
        .collect();
    let mut ev_origins = vec![EvOrigin {
        node: 1,
        demand: d.range(10.0, 40.0),
    }];
    if d.unit() < 0.5 {
        ev_origins.push(EvOrigin {
            node: 2,
            demand: d.range(5.0, 20.0),
        });
    }
    let conventional_od = vec![OdDemand {
        origin: nodes[n_nodes - 1],
        destination: 1,
        demand: d.range(5.0, 15.0),
    }];
    let transport = TransportNetwork {
        nodes: nodes.clone(),
        links,
        ev_origins,
        destinations,
        conventional_od,
        energy_overrides: vec![],
        beta_time: d.range(0.5, 1.5),
        beta_cost: d.range(0.05, 0.2),
    };

    let n_bus = d.int(2, 3).max(n_dest);
    let mut buses = Vec::new();
    for k in 0..n_bus {
        let mut b = PowerBus::new(k as u32 + 1, d.range(10.0, 40.0));
        b.is_reference = k == 0;
        b.generator = Some(GeneratorSpec {
            lower: 0.0,
            upper: 300.0,
            cost_quadratic: d.range(0.01, 0.1),
            cost_linear: d.range(5.0, 30.0),
            cost_constant: 0.0,
        });
        buses.push(b);
    }
    let n_sites = d.int(1, 2);
    for b in buses.iter_mut().rev().take(n_sites) {
        b.renewable = Some(RenewableSiteSpec {
            invest_quadratic: d.range(0.05, 0.5),
            invest_linear: d.range(0.0, 5.0),
            operate_linear: d.range(0.0, 2.0),
            unit_capital_cost: 1.0,
        });
    }
    let mut branches = Vec::new();
    for k in 1..n_bus {
        branches.push(PowerBranch {
            id: k as u32,
            from_bus: k as u32,
            to_bus: k as u32 + 1,
            susceptance: d.range(5.0, 20.0),
            limit: d.range(15.0, 60.0),
        });
    }
    if n_bus == 3 {
        branches.push(PowerBranch {
            id: 3,
            from_bus: 1,
            to_bus: 3,
            susceptance: d.range(5.0, 20.0),
            limit: d.range(15.0, 60.0),
        });
    }
    let budget = d.range(5.0, 50.0);
    let coupling = dest_nodes
        .iter()
        .enumerate()
        .map(|(k, &node)| Coupling {
            road_node: node,
            bus: (n_bus - n_dest + k) as u32 + 1,
        })
        .collect();
    let sites: Vec<u32> = buses.iter().filter(|b| b.renewable.is_some()).map(|b| b.id).collect();
    let n_scen = d.int(1, 3);
    let scenarios = sample_uniform(&sites, n_scen, 0.5, 1.5, d.0.next_u64()).expect("valid interval");
    (
        CoupledSystem {
            transport,
            power: PowerNetwork {
                buses,
                branches,
                budget,
            },
            coupling,
        },
        scenarios,
    )
}
