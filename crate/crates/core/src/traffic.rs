//! Combined distribution and assignment (CDA) for EV charging trips.
//!
//! EV drivers pick a charging destination by multinomial logit and a route by
//! user equilibrium; conventional vehicles have fixed OD demand and choose
//! routes only. The equilibrium is the minimizer of
//!
//! ```text
//!   (β1/β2) Σ_a ∫_0^{v_a} tt_a  +  (1/β2) Σ_rs q_rs (ln q_rs − 1 − β0_s)  +  Σ_s Π_s(D_s)
//! ```
//!
//! where `D_s = Σ_r e_rs q_rs` is charging energy demand at destination `s` and
//! `Π_s` is either a fixed price `λ_s D_s` or the ADMM penalty
//! `λ̂_s (D_s − p_s) + (α/2)(D_s − p_s)²`. The objective is expressed in dollars.
//!
//! The solver is a partial linearization method: the congestion integral and
//! the pricing term are linearized, the entropy term is kept exact, so the
//! direction-finding step is a logit split over current generalized costs plus
//! an all-or-nothing load of the auxiliary demand onto shortest paths.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::network::{NetworkError, RoadGraph, RoadLink, TransportNetwork};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("destination {destination} unreachable from origin {origin}")]
    UnreachableOd { origin: u32, destination: u32 },
    #[error("empty destination choice set")]
    EmptyChoiceSet,
    #[error("pricing vector has {got} entries, network has {expected} destinations")]
    PricingDimension { expected: usize, got: usize },
    #[error("relative gap {} above tolerance after {} iterations", .0.relative_gap, .0.iterations)]
    MaxIterationsExceeded(Box<TrafficSolution>),
}

/// How charging demand is priced inside the traffic objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Pricing {
    /// Exogenous charging prices per destination ($/MWh).
    Fixed(Vec<f64>),
    /// ADMM augmented-Lagrangian terms for the charging clearing condition.
    Penalty {
        duals: Vec<f64>,
        /// Charging supply per destination from the power side (MW).
        supply: Vec<f64>,
        weight: f64,
    },
}

impl Pricing {
    fn len(&self) -> usize {
        match self {
            Pricing::Fixed(p) => p.len(),
            Pricing::Penalty { duals, .. } => duals.len(),
        }
    }

    #[inline]
    fn value(&self, s: usize, demand: f64) -> f64 {
        match self {
            Pricing::Fixed(p) => p[s] * demand,
            Pricing::Penalty {
                duals,
                supply,
                weight,
            } => {
                let r = demand - supply[s];
                duals[s] * r + 0.5 * weight * r * r
            }
        }
    }

    #[inline]
    fn slope(&self, s: usize, demand: f64) -> f64 {
        match self {
            Pricing::Fixed(p) => p[s],
            Pricing::Penalty {
                duals,
                supply,
                weight,
            } => duals[s] + weight * (demand - supply[s]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProblem<'a> {
    pub network: &'a TransportNetwork,
    pub pricing: Pricing,
}

/// Flow of one OD class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdFlow {
    pub origin: u32,
    pub destination: u32,
    /// Vehicles per hour.
    pub flow: f64,
    /// Per-link flow of this class, in network link order.
    pub link_flows: Vec<f64>,
    /// Shortest-path time under the final link flows (hours).
    pub travel_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrafficSolution {
    pub link_flows: Vec<f64>,
    pub ev_flows: Vec<OdFlow>,
    pub conventional_flows: Vec<OdFlow>,
    /// Objective in dollars, including the pricing term.
    pub objective: f64,
    pub iterations: usize,
    pub relative_gap: f64,
    pub converged: bool,
}

impl TrafficSolution {
    /// Charging energy demand per destination (MW), destinations in network order.
    pub fn charging_demand(&self, network: &TransportNetwork) -> Vec<f64> {
        network
            .destinations
            .iter()
            .map(|d| {
                self.ev_flows
                    .iter()
                    .filter(|f| f.destination == d.node)
                    .map(|f| network.energy(f.origin, f.destination) * f.flow)
                    .sum()
            })
            .collect()
    }

    /// Total vehicle hours `Σ_a v_a tt_a(v_a)`.
    pub fn total_travel_time(&self, network: &TransportNetwork) -> f64 {
        network
            .links
            .iter()
            .zip(&self.link_flows)
            .map(|(l, &v)| v * l.travel_time(v))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 20_000,
        }
    }
}

/// BPR link time; errors on negative flow.
pub fn link_time(link: &RoadLink, v: f64) -> Result<f64, TrafficError> {
    Ok(link.checked_travel_time(v)?)
}

/// Area under the BPR curve from 0 to `v`.
pub fn link_time_integral(link: &RoadLink, v: f64) -> Result<f64, TrafficError> {
    Ok(link.checked_travel_time_integral(v)?)
}

/// Logit split of `total` over alternatives with generalized costs `costs`
/// (utility units, lower is better).
pub fn logit_split(costs: &[f64], total: f64) -> Result<Vec<f64>, TrafficError> {
    if costs.is_empty() {
        return Err(TrafficError::EmptyChoiceSet);
    }
    let mut out = vec![0.0; costs.len()];
    logit_into(costs, total, &mut out);
    Ok(out)
}

fn logit_into(costs: &[f64], total: f64, out: &mut [f64]) {
    let shift = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, &c) in out.iter_mut().zip(costs) {
        *o = libm::exp(shift - c);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o *= total / sum;
    }
}

/// Shortest path from one origin, with predecessor links.
#[derive(Debug, Clone)]
pub struct ShortestPathTree {
    pub origin: usize,
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl ShortestPathTree {
    /// Link indices from the origin to `node`, in travel order.
    pub fn path_to(&self, graph: &RoadGraph, node: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut at = node;
        while let Some(a) = self.pred[at] {
            out.push(a);
            at = graph.links[a].tail;
        }
        out.reverse();
    }
}

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Dijkstra over positive link times. Among equal-time predecessors the lowest
/// link id wins.
pub fn shortest_path_tree(graph: &RoadGraph, times: &[f64], origin: usize) -> ShortestPathTree {
    let n = graph.node_count();
    let mut tree = ShortestPathTree {
        origin,
        dist: vec![f64::INFINITY; n],
        pred: vec![None; n],
    };
    dijkstra_into(graph, times, origin, &mut tree, &mut BinaryHeap::new());
    tree
}

fn dijkstra_into(
    graph: &RoadGraph,
    times: &[f64],
    origin: usize,
    tree: &mut ShortestPathTree,
    heap: &mut BinaryHeap<HeapEntry>,
) {
    tree.origin = origin;
    tree.dist.fill(f64::INFINITY);
    tree.pred.fill(None);
    heap.clear();
    tree.dist[origin] = 0.0;
    heap.push(HeapEntry(0.0, origin));
    while let Some(HeapEntry(d, i)) = heap.pop() {
        if d > tree.dist[i] {
            continue;
        }
        for &a in &graph.out_links[i] {
            let j = graph.links[a].head;
            let nd = d + times[a];
            let better = nd < tree.dist[j]
                || (nd == tree.dist[j]
                    && tree.pred[j].is_some_and(|p| graph.links[a].link.id < graph.links[p].link.id));
            if better {
                let improved = nd < tree.dist[j];
                tree.dist[j] = nd;
                tree.pred[j] = Some(a);
                if improved {
                    heap.push(HeapEntry(nd, j));
                }
            }
        }
    }
}

/// Shortest time and one shortest path (link ids) for every EV origin with
/// positive demand and every charging destination.
pub fn shortest_times(
    network: &TransportNetwork,
    link_times: &[f64],
) -> Result<BTreeMap<(u32, u32), (f64, Vec<u32>)>, TrafficError> {
    let graph = network.compile()?;
    let mut out = BTreeMap::new();
    let mut path = Vec::new();
    for o in &network.ev_origins {
        let r = graph
            .node_index(o.node)
            .ok_or(NetworkError::UnknownBus(o.node))?;
        let tree = shortest_path_tree(&graph, link_times, r);
        for d in &network.destinations {
            let s = graph
                .node_index(d.node)
                .ok_or(NetworkError::UnknownBus(d.node))?;
            if !tree.dist[s].is_finite() {
                if o.demand > 0.0 {
                    return Err(TrafficError::UnreachableOd {
                        origin: o.node,
                        destination: d.node,
                    });
                }
                continue;
            }
            tree.path_to(&graph, s, &mut path);
            let ids = path.iter().map(|&a| graph.links[a].link.id).collect();
            out.insert((o.node, d.node), (tree.dist[s], ids));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct EvOd {
    origin: u32,
    destination: u32,
    r: usize,
    s: usize,
    /// Index into the destination list.
    dest: usize,
    energy: f64,
    attractiveness: f64,
}

#[derive(Debug, Clone)]
struct ConvOd {
    origin: u32,
    destination: u32,
    r: usize,
    s: usize,
    demand: f64,
}

/// Precompiled traffic instance, reusable across many solves with different
/// pricing terms.
#[derive(Debug, Clone)]
pub struct TrafficModel {
    graph: RoadGraph,
    ev: Vec<EvOd>,
    /// EV ODs grouped by origin: (demand Q_r, range into `ev`).
    groups: Vec<(f64, core::ops::Range<usize>)>,
    conv: Vec<ConvOd>,
    /// Distinct origin nodes needing a shortest-path tree.
    roots: Vec<usize>,
    destinations: usize,
    beta_time: f64,
    beta_cost: f64,
}

impl TrafficModel {
    pub fn new(network: &TransportNetwork) -> Result<Self, TrafficError> {
        let graph = network.compile()?;
        let idx = |node: u32| {
            graph
                .node_index(node)
                .ok_or(TrafficError::Network(NetworkError::UnknownNode { link: 0, node }))
        };
        if network.destinations.is_empty() {
            return Err(TrafficError::EmptyChoiceSet);
        }
        let mut ev = Vec::new();
        let mut groups = Vec::new();
        for o in network.ev_origins.iter().filter(|o| o.demand > 0.0) {
            let start = ev.len();
            for (k, d) in network.destinations.iter().enumerate() {
                ev.push(EvOd {
                    origin: o.node,
                    destination: d.node,
                    r: idx(o.node)?,
                    s: idx(d.node)?,
                    dest: k,
                    energy: network.energy(o.node, d.node),
                    attractiveness: d.attractiveness,
                });
            }
            groups.push((o.demand, start..ev.len()));
        }
        let mut conv = Vec::new();
        for od in network.conventional_od.iter().filter(|od| od.demand > 0.0) {
            conv.push(ConvOd {
                origin: od.origin,
                destination: od.destination,
                r: idx(od.origin)?,
                s: idx(od.destination)?,
                demand: od.demand,
            });
        }
        let mut roots: Vec<usize> = ev.iter().map(|o| o.r).chain(conv.iter().map(|o| o.r)).collect();
        roots.sort_unstable();
        roots.dedup();
        Ok(Self {
            graph,
            ev,
            groups,
            conv,
            roots,
            destinations: network.destinations.len(),
            beta_time: network.beta_time,
            beta_cost: network.beta_cost,
        })
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    fn congestion_weight(&self) -> f64 {
        self.beta_time / self.beta_cost
    }

    fn entropy_weight(&self) -> f64 {
        1.0 / self.beta_cost
    }

    fn demand_per_destination(&self, q: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (k, od) in self.ev.iter().enumerate() {
            out[od.dest] += od.energy * q[k];
        }
    }

    /// Exact objective at aggregate link flows `v` and EV OD flows `q`.
    fn objective(&self, pricing: &Pricing, v: &[f64], q: &[f64], scratch: &mut [f64]) -> f64 {
        let congestion: f64 = self
            .graph
            .links
            .iter()
            .zip(v)
            .map(|(l, &x)| l.link.travel_time_integral(x))
            .sum();
        let mut entropy = 0.0;
        for (k, od) in self.ev.iter().enumerate() {
            entropy += xlogx(q[k]) - q[k] - od.attractiveness * q[k];
        }
        self.demand_per_destination(q, scratch);
        let priced: f64 = scratch
            .iter()
            .enumerate()
            .map(|(s, &d)| pricing.value(s, d))
            .sum();
        self.congestion_weight() * congestion + self.entropy_weight() * entropy + priced
    }

    /// Objective of an arbitrary solution under `pricing`.
    pub fn evaluate(&self, pricing: &Pricing, solution: &TrafficSolution) -> f64 {
        let q: Vec<f64> = solution.ev_flows.iter().map(|f| f.flow).collect();
        let mut scratch = vec![0.0; self.destinations];
        self.objective(pricing, &solution.link_flows, &q, &mut scratch)
    }

    pub fn solve(
        &self,
        pricing: &Pricing,
        options: &SolveOptions,
        warm: Option<&TrafficSolution>,
    ) -> Result<TrafficSolution, TrafficError> {
        if pricing.len() != self.destinations {
            return Err(TrafficError::PricingDimension {
                expected: self.destinations,
                got: pricing.len(),
            });
        }
        let m = self.graph.link_count();
        let nev = self.ev.len();
        let nconv = self.conv.len();
        let mut ws = Workspace::new(self, m);

        let mut x_ev = vec![vec![0.0; m]; nev];
        let mut x_conv = vec![vec![0.0; m]; nconv];
        let mut q = vec![0.0; nev];
        let mut v = vec![0.0; m];

        let compatible = warm.is_some_and(|w| {
            w.ev_flows.len() == nev
                && w.conventional_flows.len() == nconv
                && w.link_flows.len() == m
                && w.ev_flows.iter().all(|f| f.flow > 0.0)
        });
        if let (true, Some(w)) = (compatible, warm) {
            for (k, f) in w.ev_flows.iter().enumerate() {
                q[k] = f.flow;
                x_ev[k].copy_from_slice(&f.link_flows);
            }
            for (k, f) in w.conventional_flows.iter().enumerate() {
                x_conv[k].copy_from_slice(&f.link_flows);
            }
            rebuild_link_flows(&mut v, &x_ev, &x_conv);
        } else {
            // uniform split at free-flow times fixes the pricing slope, then a
            // logit split over free-flow generalized costs gives the start point
            for (total, range) in &self.groups {
                let share = total / range.len() as f64;
                q[range.clone()].fill(share);
            }
            let slopes = ws.pricing_slopes(self, pricing, &q);
            self.direction(&v, &slopes, &mut ws)?;
            q.copy_from_slice(&ws.q_hat);
            for k in 0..nev {
                load_path(&mut x_ev[k], &ws.ev_paths[k], q[k]);
            }
            for (k, od) in self.conv.iter().enumerate() {
                load_path(&mut x_conv[k], &ws.conv_paths[k], od.demand);
            }
            rebuild_link_flows(&mut v, &x_ev, &x_conv);
        }

        let mut best_bound = f64::NEG_INFINITY;
        let mut gap;
        let mut iterations = 0;
        let mut converged = false;
        // conjugate target point, per class and aggregated
        let mut cj_ev = vec![vec![0.0; m]; nev];
        let mut cj_conv = vec![vec![0.0; m]; nconv];
        let mut cj_v = vec![0.0; m];
        let mut cj_q = vec![0.0; nev];
        let mut have_cj = false;
        let mut fw_ev = vec![0.0; m];
        let mut dv = vec![0.0; m];
        let mut dq = vec![0.0; nev];

        let mut refine = false;
        loop {
            let objective = self.objective(pricing, &v, &q, &mut ws.scratch);
            best_bound = best_bound.max(self.lower_bound(pricing, &v, &q, objective, &mut ws)?);
            gap = (objective - best_bound).max(0.0) / objective.abs().max(1.0);
            if gap <= options.tolerance {
                converged = true;
                break;
            }
            if iterations >= options.max_iterations {
                break;
            }
            if iterations >= PATH_SWITCH {
                refine = true;
                break;
            }
            iterations += 1;

            let mut mix = 0.0;
            if have_cj {
                mix = self.conjugate_weight(pricing, &v, &q, &cj_v, &cj_q, &ws);
            }
            for a in 0..m {
                cj_v[a] = mix * cj_v[a] + (1.0 - mix) * ws.v_hat[a];
                dv[a] = cj_v[a] - v[a];
            }
            for k in 0..nev {
                cj_q[k] = mix * cj_q[k] + (1.0 - mix) * ws.q_hat[k];
                dq[k] = cj_q[k] - q[k];
            }
            let mut step = self.line_search(pricing, &v, &q, &dv, &dq, &mut ws.scratch);
            if step.is_none() && mix > 0.0 {
                // conjugate direction lost descent: fall back to the plain one
                mix = 0.0;
                cj_v.copy_from_slice(&ws.v_hat);
                cj_q.copy_from_slice(&ws.q_hat);
                for a in 0..m {
                    dv[a] = cj_v[a] - v[a];
                }
                for k in 0..nev {
                    dq[k] = cj_q[k] - q[k];
                }
                step = self.line_search(pricing, &v, &q, &dv, &dq, &mut ws.scratch);
            }
            let Some(step) = step else {
                // no descent available at working precision
                refine = true;
                break;
            };
            have_cj = true;

            for k in 0..nev {
                fw_ev.fill(0.0);
                load_path(&mut fw_ev, &ws.ev_paths[k], ws.q_hat[k]);
                mix_into(&mut cj_ev[k], &fw_ev, mix);
                step_toward(&mut x_ev[k], &cj_ev[k], step);
                q[k] += step * dq[k];
            }
            for (k, od) in self.conv.iter().enumerate() {
                fw_ev.fill(0.0);
                load_path(&mut fw_ev, &ws.conv_paths[k], od.demand);
                mix_into(&mut cj_conv[k], &fw_ev, mix);
                step_toward(&mut x_conv[k], &cj_conv[k], step);
            }
            for a in 0..m {
                v[a] += step * dv[a];
            }
        }

        // the gap alone leaves small flows on slow paths, so routes are always
        // checked on explicit paths before reporting convergence
        if (converged || refine) && iterations < options.max_iterations {
            let mut state = PathPhase {
                x_ev: &mut x_ev,
                x_conv: &mut x_conv,
                q: &mut q,
                v: &mut v,
                iterations: &mut iterations,
                best_bound: &mut best_bound,
            };
            (gap, converged) = self.refine_paths(pricing, options, &mut state, &mut ws)?;
        }

        rebuild_link_flows(&mut v, &x_ev, &x_conv);
        let objective = self.objective(pricing, &v, &q, &mut ws.scratch);
        for (a, l) in self.graph.links.iter().enumerate() {
            ws.times[a] = l.link.travel_time(v[a]);
        }
        ws.trees(self)?;
        let ev_flows = self
            .ev
            .iter()
            .zip(x_ev)
            .enumerate()
            .map(|(k, (od, x))| OdFlow {
                origin: od.origin,
                destination: od.destination,
                flow: q[k],
                link_flows: x,
                travel_time: ws.tree_of(od.r).dist[od.s],
            })
            .collect();
        let conventional_flows = self
            .conv
            .iter()
            .zip(x_conv)
            .map(|(od, x)| OdFlow {
                origin: od.origin,
                destination: od.destination,
                flow: od.demand,
                link_flows: x,
                travel_time: ws.tree_of(od.r).dist[od.s],
            })
            .collect();
        let solution = TrafficSolution {
            link_flows: v,
            ev_flows,
            conventional_flows,
            objective,
            iterations,
            relative_gap: gap,
            converged,
        };
        if converged {
            Ok(solution)
        } else {
            Err(TrafficError::MaxIterationsExceeded(Box::new(solution)))
        }
    }

    /// Runs the direction step at `(v, q)` and returns the lower bound from the
    /// partially linearized subproblem. Leaves times, shortest paths and the
    /// logit target in `ws`.
    fn lower_bound(
        &self,
        pricing: &Pricing,
        v: &[f64],
        q: &[f64],
        objective: f64,
        ws: &mut Workspace,
    ) -> Result<f64, TrafficError> {
        let cw = self.congestion_weight();
        let ew = self.entropy_weight();
        let slopes = ws.pricing_slopes(self, pricing, q);
        self.direction(v, &slopes, ws)?;
        let mut lin = 0.0;
        for (a, va) in v.iter().enumerate() {
            lin += cw * ws.times[a] * (ws.v_hat[a] - va);
        }
        let mut ent_hat = 0.0;
        let mut ent_cur = 0.0;
        for (k, od) in self.ev.iter().enumerate() {
            let coef = -od.attractiveness * ew + od.energy * slopes[od.dest];
            lin += coef * (ws.q_hat[k] - q[k]);
            ent_hat += xlogx(ws.q_hat[k]) - ws.q_hat[k];
            ent_cur += xlogx(q[k]) - q[k];
        }
        Ok(objective + lin + ew * (ent_hat - ent_cur))
    }

    /// Path-based tail for when the linearized iterations stall. Each sweep
    /// adds the current shortest paths as columns, equilibrates route flows
    /// within every class by Newton shifts onto its cheapest path, then moves
    /// destination shares toward the logit target by exact line search, with
    /// the change spread over each class's paths in proportion. The gap is the
    /// same partially linearized bound as the main loop.
    fn refine_paths(
        &self,
        pricing: &Pricing,
        options: &SolveOptions,
        st: &mut PathPhase<'_>,
        ws: &mut Workspace,
    ) -> Result<(f64, bool), TrafficError> {
        let m = self.graph.link_count();
        let nev = self.ev.len();
        let mut ev_paths: Vec<Vec<(Vec<usize>, f64)>> = self
            .ev
            .iter()
            .enumerate()
            .map(|(k, od)| self.to_paths(od.r, od.s, &st.x_ev[k], st.q[k]))
            .collect();
        let mut conv_paths: Vec<Vec<(Vec<usize>, f64)>> = self
            .conv
            .iter()
            .enumerate()
            .map(|(k, od)| self.to_paths(od.r, od.s, &st.x_conv[k], od.demand))
            .collect();
        let mut mark = vec![0u8; m];
        let mut dv = vec![0.0; m];
        let mut dq = vec![0.0; nev];
        let mut costs = vec![0.0; nev];
        let mut q_target = vec![0.0; nev];
        loop {
            load_paths(st.x_ev, &ev_paths);
            load_paths(st.x_conv, &conv_paths);
            rebuild_link_flows(st.v, st.x_ev, st.x_conv);
            let objective = self.objective(pricing, st.v, st.q, &mut ws.scratch);
            let bound = self.lower_bound(pricing, st.v, st.q, objective, ws)?;
            *st.best_bound = st.best_bound.max(bound);
            let gap = (objective - *st.best_bound).max(0.0) / objective.abs().max(1.0);
            if gap <= options.tolerance && self.route_spread(&ev_paths, &conv_paths, st.q, ws) <= options.tolerance {
                return Ok((gap, true));
            }
            if *st.iterations >= options.max_iterations {
                return Ok((gap, false));
            }
            *st.iterations += 1;

            for (paths, fresh) in ev_paths.iter_mut().zip(&ws.ev_paths).chain(conv_paths.iter_mut().zip(&ws.conv_paths)) {
                if !paths.iter().any(|(p, _)| p == fresh) {
                    paths.push((fresh.clone(), 0.0));
                }
            }
            for paths in ev_paths.iter_mut().chain(conv_paths.iter_mut()) {
                self.equilibrate_routes(paths, st.v, &mut ws.times, &mut mark);
            }

            let slopes = ws.pricing_slopes(self, pricing, st.q);
            for (k, od) in self.ev.iter().enumerate() {
                let t = ev_paths[k]
                    .iter()
                    .map(|(p, _)| path_cost(p, &ws.times))
                    .fold(f64::INFINITY, f64::min);
                costs[k] = self.beta_time * t - od.attractiveness + self.beta_cost * od.energy * slopes[od.dest];
            }
            for (total, range) in &self.groups {
                logit_into(&costs[range.clone()], *total, &mut q_target[range.clone()]);
            }
            dv.fill(0.0);
            for k in 0..nev {
                dq[k] = q_target[k] - st.q[k];
                let share = dq[k] / st.q[k];
                for (p, h) in &ev_paths[k] {
                    load_path(&mut dv, p, share * h);
                }
            }
            let Some(step) = self.line_search(pricing, st.v, st.q, &dv, &dq, &mut ws.scratch) else {
                continue;
            };
            for k in 0..nev {
                let scale = 1.0 + step * dq[k] / st.q[k];
                for (_, h) in &mut ev_paths[k] {
                    *h *= scale;
                }
                st.q[k] += step * dq[k];
            }
        }
    }

    /// Largest relative excess of a used path's time over the shortest time
    /// of its class, at the times and trees left in `ws`. Paths below
    /// `USED_PATH_SHARE` of the class flow are ignored.
    fn route_spread(
        &self,
        ev_paths: &[Vec<(Vec<usize>, f64)>],
        conv_paths: &[Vec<(Vec<usize>, f64)>],
        q: &[f64],
        ws: &Workspace,
    ) -> f64 {
        let ev = self.ev.iter().zip(ev_paths).zip(q).map(|((od, p), &q)| (od.r, od.s, p, q));
        let conv = self.conv.iter().zip(conv_paths).map(|(od, p)| (od.r, od.s, p, od.demand));
        let mut worst = 0.0_f64;
        for (r, s, paths, total) in ev.chain(conv) {
            if r == s {
                continue;
            }
            let best = ws.tree_of(r).dist[s];
            for (p, h) in paths {
                if *h >= USED_PATH_SHARE * total {
                    worst = worst.max((path_cost(p, &ws.times) - best) / best.max(f64::MIN_POSITIVE));
                }
            }
        }
        worst
    }

    /// Splits one class's link flows into paths carrying exactly `total`.
    fn to_paths(&self, r: usize, s: usize, x: &[f64], total: f64) -> Vec<(Vec<usize>, f64)> {
        if r == s {
            return vec![(Vec::new(), total)];
        }
        let mut paths = decompose_paths(&self.graph, r, s, x, 0.0);
        let found: f64 = paths.iter().map(|(_, h)| h).sum();
        if found > 0.0 {
            // flow on cycles is dropped and the rest rescaled
            for (_, h) in &mut paths {
                *h *= total / found;
            }
        }
        paths
    }

    /// Gauss-Seidel pass of Newton shifts from each path onto the class's
    /// cheapest path, keeping `v` and `times` current.
    fn equilibrate_routes(&self, paths: &mut Vec<(Vec<usize>, f64)>, v: &mut [f64], times: &mut [f64], mark: &mut [u8]) {
        if paths.len() < 2 {
            return;
        }
        let best = (0..paths.len())
            .min_by(|&i, &j| path_cost(&paths[i].0, times).total_cmp(&path_cost(&paths[j].0, times)))
            .unwrap_or(0);
        let star = core::mem::take(&mut paths[best].0);
        for &a in &star {
            mark[a] = 1;
        }
        let slope = |a: usize, v: &[f64]| self.graph.links[a].link.travel_time_slope(v[a].max(0.0));
        let mut moved = 0.0;
        for (i, (p, h)) in paths.iter_mut().enumerate() {
            if i == best || *h <= 0.0 {
                continue;
            }
            let diff = path_cost(p, times) - path_cost(&star, times);
            if !(diff > 0.0) {
                continue;
            }
            // 1 on the cheapest path only, 2 on both
            let mut curvature = 0.0;
            for &a in p.iter() {
                if mark[a] == 1 {
                    mark[a] = 2;
                } else {
                    curvature += slope(a, v);
                }
            }
            for &a in &star {
                if mark[a] == 1 {
                    curvature += slope(a, v);
                }
            }
            let delta = if curvature > 0.0 { (diff / curvature).min(*h) } else { *h };
            for &a in &star {
                if mark[a] == 1 {
                    v[a] += delta;
                    times[a] = self.graph.links[a].link.travel_time(v[a]);
                }
            }
            for &a in p.iter() {
                if mark[a] == 2 {
                    mark[a] = 1;
                } else {
                    v[a] = (v[a] - delta).max(0.0);
                    times[a] = self.graph.links[a].link.travel_time(v[a]);
                }
            }
            *h -= delta;
            moved += delta;
        }
        for &a in &star {
            mark[a] = 0;
        }
        paths[best].0 = star;
        paths[best].1 += moved;
        paths.retain(|(_, h)| *h > 0.0);
    }

    /// Weight of the previous target in a conjugate Frank-Wolfe update, using
    /// the diagonal Hessian at the current point.
    fn conjugate_weight(
        &self,
        pricing: &Pricing,
        v: &[f64],
        q: &[f64],
        prev_v: &[f64],
        prev_q: &[f64],
        ws: &Workspace,
    ) -> f64 {
        let cw = self.congestion_weight();
        let ew = self.entropy_weight();
        let (mut num, mut den) = (0.0, 0.0);
        for (a, l) in self.graph.links.iter().enumerate() {
            let h = cw * l.link.travel_time_slope(v[a].max(0.0));
            let d = prev_v[a] - v[a];
            num += d * h * (ws.v_hat[a] - v[a]);
            den += d * h * (ws.v_hat[a] - prev_v[a]);
        }
        for k in 0..self.ev.len() {
            let h = ew / q[k].max(1e-300);
            let d = prev_q[k] - q[k];
            num += d * h * (ws.q_hat[k] - q[k]);
            den += d * h * (ws.q_hat[k] - prev_q[k]);
        }
        if let Pricing::Penalty { weight, .. } = pricing {
            for s in 0..self.destinations {
                let (mut ds, mut bs, mut cs) = (0.0, 0.0, 0.0);
                for (k, od) in self.ev.iter().enumerate().filter(|(_, od)| od.dest == s) {
                    ds += od.energy * (prev_q[k] - q[k]);
                    bs += od.energy * (ws.q_hat[k] - q[k]);
                    cs += od.energy * (ws.q_hat[k] - prev_q[k]);
                }
                num += weight * ds * bs;
                den += weight * ds * cs;
            }
        }
        if den == 0.0 || !num.is_finite() || !den.is_finite() {
            return 0.0;
        }
        (num / den).clamp(0.0, 1.0 - CONJUGATE_MARGIN)
    }

    /// Exact minimizer on `[0, 1]` of the objective along `(dv, dq)` by
    /// safeguarded regula falsi on the directional derivative. `None` when
    /// the direction is not a descent direction.
    fn line_search(
        &self,
        pricing: &Pricing,
        v: &[f64],
        q: &[f64],
        dv: &[f64],
        dq: &[f64],
        scratch: &mut [f64],
    ) -> Option<f64> {
        let cw = self.congestion_weight();
        let ew = self.entropy_weight();
        let mut deriv = |t: f64| {
            let mut g = 0.0;
            for (a, l) in self.graph.links.iter().enumerate() {
                if dv[a] != 0.0 {
                    g += cw * l.link.travel_time((v[a] + t * dv[a]).max(0.0)) * dv[a];
                }
            }
            scratch.fill(0.0);
            for (k, od) in self.ev.iter().enumerate() {
                scratch[od.dest] += od.energy * (q[k] + t * dq[k]);
            }
            for (k, od) in self.ev.iter().enumerate() {
                if dq[k] != 0.0 {
                    let qk = q[k] + t * dq[k];
                    let marginal = ew * (libm::log(qk) - od.attractiveness)
                        + od.energy * pricing.slope(od.dest, scratch[od.dest]);
                    g += marginal * dq[k];
                }
            }
            g
        };
        let g0 = deriv(0.0);
        if !(g0 < 0.0) {
            return None;
        }
        let g1 = deriv(1.0);
        if g1 <= 0.0 {
            return Some(1.0);
        }
        let (mut lo, mut hi, mut glo, mut ghi) = (0.0_f64, 1.0_f64, g0, g1);
        let mut side = 0i8;
        for _ in 0..LINE_SEARCH_ITERATIONS {
            let mut t = if ghi.is_finite() { lo - glo * (hi - lo) / (ghi - glo) } else { 0.5 * (lo + hi) };
            if !(t > lo && t < hi) {
                t = 0.5 * (lo + hi);
            }
            let g = deriv(t);
            if g.is_nan() {
                return Some(lo);
            }
            if g < 0.0 {
                lo = t;
                glo = g;
                if side == -1 {
                    ghi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                ghi = g;
                if side == 1 {
                    glo *= 0.5;
                }
                side = 1;
            }
            if g.abs() <= LINE_SEARCH_SLOPE * g0.abs() || hi - lo <= LINE_SEARCH_WIDTH {
                break;
            }
        }
        Some(if lo > 0.0 { lo } else { 0.5 * (lo + hi) })
    }

    /// Direction-finding step at aggregate flows `v`: fills `times`, shortest
    /// paths, the logit target `q_hat` and its all-or-nothing load `v_hat`.
    fn direction(&self, v: &[f64], slopes: &[f64], ws: &mut Workspace) -> Result<(), TrafficError> {
        for (a, l) in self.graph.links.iter().enumerate() {
            ws.times[a] = l.link.travel_time(v[a]);
        }
        ws.trees(self)?;
        for (k, od) in self.ev.iter().enumerate() {
            let tree = &ws.trees[ws.tree_slot[od.r]];
            let t = tree.dist[od.s];
            if !t.is_finite() {
                return Err(TrafficError::UnreachableOd {
                    origin: od.origin,
                    destination: od.destination,
                });
            }
            ws.costs[k] = self.beta_time * t - od.attractiveness
                + self.beta_cost * od.energy * slopes[od.dest];
            let mut path = core::mem::take(&mut ws.ev_paths[k]);
            tree.path_to(&self.graph, od.s, &mut path);
            ws.ev_paths[k] = path;
        }
        for (k, od) in self.conv.iter().enumerate() {
            let tree = &ws.trees[ws.tree_slot[od.r]];
            if !tree.dist[od.s].is_finite() {
                return Err(TrafficError::UnreachableOd {
                    origin: od.origin,
                    destination: od.destination,
                });
            }
            let mut path = core::mem::take(&mut ws.conv_paths[k]);
            tree.path_to(&self.graph, od.s, &mut path);
            ws.conv_paths[k] = path;
        }
        for (total, range) in &self.groups {
            logit_into(&ws.costs[range.clone()], *total, &mut ws.q_hat[range.clone()]);
        }
        ws.v_hat.fill(0.0);
        for k in 0..self.ev.len() {
            for &a in &ws.ev_paths[k] {
                ws.v_hat[a] += ws.q_hat[k];
            }
        }
        for (k, od) in self.conv.iter().enumerate() {
            for &a in &ws.conv_paths[k] {
                ws.v_hat[a] += od.demand;
            }
        }
        Ok(())
    }
}

struct Workspace {
    times: Vec<f64>,
    trees: Vec<ShortestPathTree>,
    /// node index -> position in `trees`
    tree_slot: Vec<usize>,
    heap: BinaryHeap<HeapEntry>,
    costs: Vec<f64>,
    q_hat: Vec<f64>,
    v_hat: Vec<f64>,
    ev_paths: Vec<Vec<usize>>,
    conv_paths: Vec<Vec<usize>>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(model: &TrafficModel, m: usize) -> Self {
        let n = model.graph.node_count();
        let mut tree_slot = vec![usize::MAX; n];
        let trees = model
            .roots
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                tree_slot[r] = k;
                ShortestPathTree {
                    origin: r,
                    dist: vec![f64::INFINITY; n],
                    pred: vec![None; n],
                }
            })
            .collect();
        Self {
            times: vec![0.0; m],
            trees,
            tree_slot,
            heap: BinaryHeap::new(),
            costs: vec![0.0; model.ev.len()],
            q_hat: vec![0.0; model.ev.len()],
            v_hat: vec![0.0; m],
            ev_paths: vec![Vec::new(); model.ev.len()],
            conv_paths: vec![Vec::new(); model.conv.len()],
            scratch: vec![0.0; model.destinations],
        }
    }

    fn trees(&mut self, model: &TrafficModel) -> Result<(), TrafficError> {
        for tree in &mut self.trees {
            let r = tree.origin;
            dijkstra_into(&model.graph, &self.times, r, tree, &mut self.heap);
        }
        Ok(())
    }

    fn tree_of(&self, node: usize) -> &ShortestPathTree {
        &self.trees[self.tree_slot[node]]
    }

    fn pricing_slopes(&mut self, model: &TrafficModel, pricing: &Pricing, q: &[f64]) -> Vec<f64> {
        model.demand_per_destination(q, &mut self.scratch);
        self.scratch
            .iter()
            .enumerate()
            .map(|(s, &d)| pricing.slope(s, d))
            .collect()
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * libm::log(x)
    } else {
        0.0
    }
}

fn load_path(x: &mut [f64], path: &[usize], amount: f64) {
    for &a in path {
        x[a] += amount;
    }
}

fn path_cost(path: &[usize], times: &[f64]) -> f64 {
    path.iter().map(|&a| times[a]).sum()
}

fn load_paths(x: &mut [Vec<f64>], paths: &[Vec<(Vec<usize>, f64)>]) {
    for (xk, pk) in x.iter_mut().zip(paths) {
        xk.fill(0.0);
        for (p, h) in pk {
            load_path(xk, p, *h);
        }
    }
}

/// Solver state handed to the path-based tail.
struct PathPhase<'a> {
    x_ev: &'a mut [Vec<f64>],
    x_conv: &'a mut [Vec<f64>],
    q: &'a mut [f64],
    v: &'a mut [f64],
    iterations: &'a mut usize,
    best_bound: &'a mut f64,
}

fn rebuild_link_flows(v: &mut [f64], x_ev: &[Vec<f64>], x_conv: &[Vec<f64>]) {
    v.fill(0.0);
    for x in x_ev.iter().chain(x_conv) {
        for (va, xa) in v.iter_mut().zip(x) {
            *va += xa;
        }
    }
}

/// `target = w * target + (1 - w) * fresh`
fn mix_into(target: &mut [f64], fresh: &[f64], w: f64) {
    for (t, f) in target.iter_mut().zip(fresh) {
        *t = w * *t + (1.0 - w) * f;
    }
}

fn step_toward(x: &mut [f64], target: &[f64], step: f64) {
    for (xi, ti) in x.iter_mut().zip(target) {
        *xi += step * (ti - *xi);
    }
}

const LINE_SEARCH_ITERATIONS: usize = 100;
const LINE_SEARCH_WIDTH: f64 = 1e-15;
const LINE_SEARCH_SLOPE: f64 = 1e-12;
const CONJUGATE_MARGIN: f64 = 1e-2;
/// Paths carrying less than this share of their class are not held to the
/// route-time condition.
const USED_PATH_SHARE: f64 = 1e-6;
/// Linearized iterations per solve before switching to path refinement.
const PATH_SWITCH: usize = 300;

/// Solves one CDA instance from a cold start.
pub fn solve(
    problem: &TrafficProblem<'_>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<TrafficSolution, TrafficError> {
    TrafficModel::new(problem.network)?.solve(
        &problem.pricing,
        &SolveOptions {
            tolerance,
            max_iterations,
        },
        None,
    )
}

/// Equilibrium OD travel times keyed by (origin, destination).
pub fn od_travel_times(solution: &TrafficSolution) -> BTreeMap<(u32, u32), f64> {
    solution
        .ev_flows
        .iter()
        .chain(&solution.conventional_flows)
        .map(|f| ((f.origin, f.destination), f.travel_time))
        .collect()
}

/// Splits one class's link flows into origin-to-destination paths (link
/// indices) with their flows. Flow below `floor` is left undecomposed.
pub fn decompose_paths(
    graph: &RoadGraph,
    origin: usize,
    destination: usize,
    link_flows: &[f64],
    floor: f64,
) -> Vec<(Vec<usize>, f64)> {
    let mut residual = link_flows.to_vec();
    let mut paths = Vec::new();
    if origin == destination {
        return paths;
    }
    let n = graph.node_count();
    for _ in 0..(graph.link_count() * 4 + 16) {
        let mut path = Vec::new();
        let mut at = origin;
        let mut visited = vec![false; n];
        visited[origin] = true;
        while at != destination {
            let next = graph.out_links[at]
                .iter()
                .copied()
                .filter(|&a| residual[a] > floor && !visited[graph.links[a].head])
                .max_by(|&a, &b| residual[a].total_cmp(&residual[b]));
            let Some(a) = next else { break };
            path.push(a);
            at = graph.links[a].head;
            visited[at] = true;
        }
        if at != destination || path.is_empty() {
            break;
        }
        let amount = path.iter().map(|&a| residual[a]).fold(f64::INFINITY, f64::min);
        for &a in &path {
            residual[a] -= amount;
        }
        paths.push((path, amount));
    }
    paths
}

/// Largest relative excess of a used path's time over the OD's shortest time.
///
/// A path counts as used when it carries at least `share` of its OD flow.
pub fn wardrop_violation(
    network: &TransportNetwork,
    solution: &TrafficSolution,
    share: f64,
) -> Result<f64, TrafficError> {
    let graph = network.compile()?;
    let times: Vec<f64> = graph
        .links
        .iter()
        .zip(&solution.link_flows)
        .map(|(l, &v)| l.link.travel_time(v))
        .collect();
    let mut worst = 0.0_f64;
    for f in solution.ev_flows.iter().chain(&solution.conventional_flows) {
        let (Some(r), Some(s)) = (graph.node_index(f.origin), graph.node_index(f.destination))
        else {
            continue;
        };
        if r == s || f.flow <= 0.0 {
            continue;
        }
        let tree = shortest_path_tree(&graph, &times, r);
        let best = tree.dist[s];
        for (path, amount) in decompose_paths(&graph, r, s, &f.link_flows, 1e-12 * f.flow) {
            if amount < share * f.flow {
                continue;
            }
            let t: f64 = path.iter().map(|&a| times[a]).sum();
            worst = worst.max((t - best) / best.max(f64::MIN_POSITIVE));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ChargingDestination, EvOrigin, OdDemand};
    use approx::assert_relative_eq;

    fn link(id: u32, tail: u32, head: u32, t0: f64, cap: f64) -> RoadLink {
        RoadLink::new(id, tail, head, t0, cap)
    }

    #[test]
    fn bpr_values() {
        let l = link(1, 1, 2, 1.0, 10.0);
        assert_eq!(link_time(&l, 0.0).unwrap(), 1.0);
        assert_relative_eq!(link_time(&l, 10.0).unwrap(), 1.15, epsilon = 1e-14);
        let l2 = link(2, 1, 2, 2.0, 10.0);
        assert_relative_eq!(link_time(&l2, 20.0).unwrap(), 6.8, epsilon = 1e-12);
        assert!(matches!(
            link_time(&l, -1.0),
            Err(TrafficError::Network(NetworkError::NegativeFlow(_)))
        ));
    }

    #[test]
    fn bpr_integral_values() {
        let l = link(1, 1, 2, 1.0, 10.0);
        assert_eq!(link_time_integral(&l, 0.0).unwrap(), 0.0);
        assert_relative_eq!(link_time_integral(&l, 10.0).unwrap(), 10.3, epsilon = 1e-12);
        assert!(link_time_integral(&l, -0.5).is_err());
    }

    #[test]
    fn bpr_integral_matches_time_by_central_differences() {
        let l = RoadLink {
            bpr_alpha: 0.3,
            bpr_beta: 2.5,
            ..link(1, 1, 2, 1.7, 13.0)
        };
        let h = 1e-5;
        for v in [0.5, 3.0, 13.0, 40.0] {
            let fd = (l.travel_time_integral(v + h) - l.travel_time_integral(v - h)) / (2.0 * h);
            assert!((fd - l.travel_time(v)).abs() <= 1e-8 * l.travel_time(v).max(1.0));
            let fd_slope = (l.travel_time(v + h) - l.travel_time(v - h)) / (2.0 * h);
            assert!((fd_slope - l.travel_time_slope(v)).abs() <= 1e-6 * fd_slope.abs().max(1.0));
        }
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit_split(&[0.7, 0.7], 50.0).unwrap(), vec![25.0, 25.0]);
        let q = logit_split(&[0.0, libm::log(3.0)], 40.0).unwrap();
        assert_relative_eq!(q[0], 30.0, epsilon = 1e-12);
        assert_relative_eq!(q[1], 10.0, epsilon = 1e-12);
        assert_eq!(logit_split(&[5.0], 12.0).unwrap(), vec![12.0]);
        assert_eq!(logit_split(&[], 1.0), Err(TrafficError::EmptyChoiceSet));
    }

    #[test]
    fn logit_survives_huge_costs() {
        let q = logit_split(&[1e6, 1e6 + 1.0, 2e6], 10.0).unwrap();
        assert!(q.iter().all(|x| x.is_finite()));
        assert_relative_eq!(q.iter().sum::<f64>(), 10.0, epsilon = 1e-12);
    }

    fn three_node() -> TransportNetwork {
        TransportNetwork {
            nodes: vec![1, 2, 3],
            links: vec![
                link(1, 1, 2, 1.0, 10.0),
                link(2, 1, 3, 1.0, 10.0),
                link(3, 3, 2, 0.5, 10.0),
            ],
            ev_origins: vec![EvOrigin {
                node: 1,
                demand: 50.0,
            }],
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
        }
    }

    #[test]
    fn shortest_times_three_node() {
        let net = three_node();
        let sp = shortest_times(&net, &[1.0, 1.0, 0.5]).unwrap();
        assert_eq!(sp[&(1, 2)].0, 1.0);
        assert_eq!(sp[&(1, 2)].1, vec![1]);
        assert_eq!(sp[&(1, 3)].0, 1.0);
        assert_eq!(sp[&(1, 3)].1, vec![2]);
    }

    #[test]
    fn shortest_times_ties_prefer_low_link_id() {
        let net = three_node();
        // 1->2 direct (1.5) ties with 1->3->2 (1.0 + 0.5)
        let sp = shortest_times(&net, &[1.5, 1.0, 0.5]).unwrap();
        assert_eq!(sp[&(1, 2)].0, 1.5);
        assert_eq!(sp[&(1, 2)].1, vec![1]);
    }

    #[test]
    fn shortest_times_single_link() {
        let mut net = three_node();
        net.nodes = vec![1, 2];
        net.links = vec![link(1, 1, 2, 1.0, 10.0)];
        net.destinations.truncate(1);
        let sp = shortest_times(&net, &[2.5]).unwrap();
        assert_eq!(sp[&(1, 2)].0, 2.5);
    }

    #[test]
    fn shortest_times_unreachable() {
        let mut net = three_node();
        net.nodes.push(4);
        net.destinations.push(ChargingDestination {
            node: 4,
            attractiveness: 0.0,
            energy: 1.0,
        });
        assert_eq!(
            shortest_times(&net, &[1.0, 1.0, 0.5]),
            Err(TrafficError::UnreachableOd {
                origin: 1,
                destination: 4
            })
        );
    }

    #[test]
    fn parallel_links_split_evenly() {
        let net = TransportNetwork {
            nodes: vec![1, 2],
            links: vec![link(1, 1, 2, 1.0, 10.0), link(2, 1, 2, 1.0, 10.0)],
            ev_origins: vec![],
            destinations: vec![ChargingDestination {
                node: 2,
                attractiveness: 0.0,
                energy: 0.0,
            }],
            conventional_od: vec![OdDemand {
                origin: 1,
                destination: 2,
                demand: 30.0,
            }],
            energy_overrides: vec![],
            beta_time: 1.0,
            beta_cost: 1.0,
        };
        let sol = solve(
            &TrafficProblem {
                network: &net,
                pricing: Pricing::Fixed(vec![0.0]),
            },
            1e-9,
            100_000,
        )
        .unwrap();
        assert_relative_eq!(sol.link_flows[0], 15.0, epsilon = 1e-3);
        assert_relative_eq!(sol.link_flows[1], 15.0, epsilon = 1e-3);
    }

    #[test]
    fn symmetric_prices_split_evenly() {
        let mut net = three_node();
        // make the two destinations mirror images
        net.links = vec![link(1, 1, 2, 1.0, 10.0), link(2, 1, 3, 1.0, 10.0)];
        let sol = solve(
            &TrafficProblem {
                network: &net,
                pricing: Pricing::Fixed(vec![20.0, 20.0]),
            },
            1e-10,
            10_000,
        )
        .unwrap();
        assert_relative_eq!(sol.ev_flows[0].flow, 25.0, epsilon = 1e-9);
        assert_relative_eq!(sol.ev_flows[1].flow, 25.0, epsilon = 1e-9);
    }
}
