//! Link-based static assignment: all-or-nothing loading, MSA and Frank-Wolfe
//! for user equilibrium and system optimum, with path-flow bookkeeping.
//!
//! The SO problem is solved as a UE problem on marginal link costs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{total_system_travel_time, DemandTable, FlowState, Network};
use crate::paths::{shortest_path_tree, Route};

pub const DEFAULT_FLOW_FLOOR: f64 = 0.5;
const GOLDEN_SECTION_ITERS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ue,
    So,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Ue => "UE",
            Objective::So => "SO",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ue" => Ok(Objective::Ue),
            "so" => Ok(Objective::So),
            other => Err(Error::Config(format!(
                "unknown objective {other:?} (expected ue|so)"
            ))),
        }
    }
}

/// Step-size rule of the convex-combination solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Msa,
    FrankWolfe,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Msa => "MSA",
            Method::FrankWolfe => "FW",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msa" => Ok(Method::Msa),
            "fw" | "frank-wolfe" => Ok(Method::FrankWolfe),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected msa|fw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteFlow {
    pub route: Route,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub method: Method,
    pub objective: Objective,
    pub flows: FlowState,
    pub tstt: f64,
    pub iterations: usize,
    pub relative_gap: f64,
    pub converged: bool,
    /// Per demand entry, in demand-table order.
    pub route_flows: Vec<Vec<RouteFlow>>,
}

/// UE: plain link times. SO: marginal link times.
pub fn effective_costs(net: &Network, flows: &FlowState, obj: Objective) -> Result<Vec<f64>> {
    net.check_flows(flows)?;
    Ok(match obj {
        Objective::Ue => net.link_times(flows),
        Objective::So => net.marginal_times(flows),
    })
}

/// Shortest route for every OD with positive demand, in demand order.
pub fn shortest_routes(
    net: &Network,
    costs: &[f64],
    demand: &DemandTable,
) -> Result<Vec<Option<Route>>> {
    let mut trees: Vec<Option<Vec<Option<Route>>>> = vec![None; net.num_nodes()];
    demand
        .entries()
        .iter()
        .map(|e| {
            if e.demand <= 0.0 {
                return Ok(None);
            }
            if trees[e.origin].is_none() {
                trees[e.origin] = Some(shortest_path_tree(net, costs, e.origin)?);
            }
            let tree = trees[e.origin].as_ref().expect("tree computed above");
            tree[e.destination]
                .clone()
                .map(Some)
                .ok_or_else(|| Error::NoPath {
                    origin: net.node_name(e.origin).to_string(),
                    destination: net.node_name(e.destination).to_string(),
                })
        })
        .collect()
}

fn load_routes(net: &Network, demand: &DemandTable, routes: &[Option<Route>]) -> FlowState {
    let mut flows = FlowState::zeros(net.num_links());
    for (e, r) in demand.entries().iter().zip(routes) {
        if let Some(r) = r {
            for &l in &r.links {
                flows.volumes_mut()[l] += e.demand;
            }
        }
    }
    flows
}

/// Loads every OD's full demand on its shortest route under fixed `costs`.
pub fn all_or_nothing(net: &Network, costs: &[f64], demand: &DemandTable) -> Result<FlowState> {
    let routes = shortest_routes(net, costs, demand)?;
    Ok(load_routes(net, demand, &routes))
}

fn gap_from_parts(
    flows: &FlowState,
    costs: &[f64],
    demand: &DemandTable,
    routes: &[Option<Route>],
) -> Result<f64> {
    let tc: f64 = flows.volumes().iter().zip(costs).map(|(x, c)| x * c).sum();
    let spc: f64 = demand
        .entries()
        .iter()
        .zip(routes)
        .filter_map(|(e, r)| r.as_ref().map(|r| e.demand * r.cost(costs)))
        .sum();
    if demand.total() == 0.0 {
        return Ok(0.0);
    }
    if spc <= 0.0 {
        return Err(Error::Degenerate(
            "shortest-path cost is zero with positive demand; relative gap undefined".into(),
        ));
    }
    // SPC lower-bounds TC for feasible flows; clamp rounding noise.
    Ok((tc / spc - 1.0).max(0.0))
}

/// `TC / SPC - 1` under the objective's effective costs.
pub fn relative_gap(
    net: &Network,
    flows: &FlowState,
    demand: &DemandTable,
    obj: Objective,
) -> Result<f64> {
    let costs = effective_costs(net, flows, obj)?;
    let routes = shortest_routes(net, &costs, demand)?;
    gap_from_parts(flows, &costs, demand, &routes)
}

/// Objective minimised by the line search: Beckmann for UE, TSTT for SO.
pub fn assignment_objective(net: &Network, flows: &FlowState, obj: Objective) -> f64 {
    net.links()
        .iter()
        .zip(flows.volumes())
        .map(|(l, &x)| match obj {
            Objective::Ue => l.cost.integral(x),
            Objective::So => x * l.cost.time(x),
        })
        .sum()
}

fn combined_objective(net: &Network, x: &[f64], y: &[f64], lambda: f64, obj: Objective) -> f64 {
    net.links()
        .iter()
        .zip(x.iter().zip(y))
        .map(|(l, (&xe, &ye))| {
            let v = (1.0 - lambda) * xe + lambda * ye;
            match obj {
                Objective::Ue => l.cost.integral(v),
                Objective::So => v * l.cost.time(v),
            }
        })
        .sum()
}

fn golden_section(mut f: impl FnMut(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..GOLDEN_SECTION_ITERS {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    // Endpoints are candidates too: the minimiser may sit on the boundary.
    [(mid, f(mid)), (1.0, f(1.0)), (0.0, f(0.0))]
        .into_iter()
        .fold(
            (0.0, f64::INFINITY),
            |best, c| if c.1 < best.1 { c } else { best },
        )
        .0
}

/// Convex-combination assignment solver exposing each iterate.
///
/// Iteration 1 is the all-or-nothing load at zero-flow effective costs;
/// iteration `i` mixes the incumbent with a new all-or-nothing target.
pub struct Solver<'a> {
    net: &'a Network,
    demand: &'a DemandTable,
    objective: Objective,
    method: Method,
    flows: FlowState,
    route_flows: Vec<Vec<RouteFlow>>,
    iteration: usize,
    last_target: FlowState,
    last_step: f64,
    pending: Option<(Vec<f64>, Vec<Option<Route>>)>,
}

impl<'a> Solver<'a> {
    pub fn new(
        net: &'a Network,
        demand: &'a DemandTable,
        objective: Objective,
        method: Method,
    ) -> Result<Self> {
        let zero = FlowState::zeros(net.num_links());
        let costs = effective_costs(net, &zero, objective)?;
        let routes = shortest_routes(net, &costs, demand)?;
        let flows = load_routes(net, demand, &routes);
        let route_flows = demand
            .entries()
            .iter()
            .zip(routes)
            .map(|(e, r)| {
                r.map(|route| {
                    vec![RouteFlow {
                        route,
                        flow: e.demand,
                    }]
                })
                .unwrap_or_default()
            })
            .collect();
        Ok(Solver {
            net,
            demand,
            objective,
            method,
            last_target: flows.clone(),
            flows,
            route_flows,
            iteration: 1,
            last_step: 1.0,
            pending: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn flows(&self) -> &FlowState {
        &self.flows
    }

    pub fn route_flows(&self) -> &[Vec<RouteFlow>] {
        &self.route_flows
    }

    /// All-or-nothing target loaded in the latest iteration.
    pub fn last_target(&self) -> &FlowState {
        &self.last_target
    }

    pub fn last_step(&self) -> f64 {
        self.last_step
    }

    fn ensure_pending(&mut self) -> Result<()> {
        if self.pending.is_none() {
            let costs = effective_costs(self.net, &self.flows, self.objective)?;
            let routes = shortest_routes(self.net, &costs, self.demand)?;
            self.pending = Some((costs, routes));
        }
        Ok(())
    }

    /// Relative gap of the current iterate.
    pub fn gap(&mut self) -> Result<f64> {
        self.ensure_pending()?;
        let (costs, routes) = self.pending.as_ref().expect("pending set");
        gap_from_parts(&self.flows, costs, self.demand, routes)
    }

    pub fn objective_value(&self) -> f64 {
        assignment_objective(self.net, &self.flows, self.objective)
    }

    /// Moves to the next iterate.
    pub fn advance(&mut self) -> Result<()> {
        self.ensure_pending()?;
        let (_, routes) = self.pending.take().expect("pending set");
        let target = load_routes(self.net, self.demand, &routes);
        self.iteration += 1;
        let step = match self.method {
            Method::Msa => 1.0 / self.iteration as f64,
            Method::FrankWolfe => {
                let (x, y) = (self.flows.volumes(), target.volumes());
                golden_section(|l| combined_objective(self.net, x, y, l, self.objective))
            }
        };
        for (v, t) in self.flows.volumes_mut().iter_mut().zip(target.volumes()) {
            *v = (1.0 - step) * *v + step * t;
        }
        for ((od_flows, route), e) in self
            .route_flows
            .iter_mut()
            .zip(routes)
            .zip(self.demand.entries())
        {
            let Some(route) = route else { continue };
            for rf in od_flows.iter_mut() {
                rf.flow *= 1.0 - step;
            }
            match od_flows.iter_mut().find(|rf| rf.route == route) {
                Some(rf) => rf.flow += step * e.demand,
                None => od_flows.push(RouteFlow {
                    route,
                    flow: step * e.demand,
                }),
            }
        }
        self.last_target = target;
        self.last_step = step;
        Ok(())
    }

    /// Runs until `gap <= gap_tol` or `max_iters` iterations.
    pub fn run(mut self, max_iters: usize, gap_tol: f64) -> Result<AssignmentResult> {
        if max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        let mut gap = self.gap()?;
        while gap > gap_tol && self.iteration < max_iters {
            self.advance()?;
            gap = self.gap()?;
        }
        if !gap.is_finite() {
            return Err(Error::Numerical(format!("relative gap became {gap}")));
        }
        let mut route_flows = self.route_flows;
        for od in &mut route_flows {
            od.retain(|rf| rf.flow > 0.0);
        }
        Ok(AssignmentResult {
            method: self.method,
            objective: self.objective,
            tstt: total_system_travel_time(self.net, &self.flows)?,
            flows: self.flows,
            iterations: self.iteration,
            relative_gap: gap,
            converged: gap <= gap_tol,
            route_flows,
        })
    }
}

pub fn solve(
    net: &Network,
    demand: &DemandTable,
    obj: Objective,
    method: Method,
    max_iters: usize,
    gap_tol: f64,
) -> Result<AssignmentResult> {
    Solver::new(net, demand, obj, method)?.run(max_iters, gap_tol)
}

pub fn solve_msa(
    net: &Network,
    demand: &DemandTable,
    obj: Objective,
    max_iters: usize,
    gap_tol: f64,
) -> Result<AssignmentResult> {
    solve(net, demand, obj, Method::Msa, max_iters, gap_tol)
}

pub fn solve_frank_wolfe(
    net: &Network,
    demand: &DemandTable,
    obj: Objective,
    max_iters: usize,
    gap_tol: f64,
) -> Result<AssignmentResult> {
    solve(net, demand, obj, Method::FrankWolfe, max_iters, gap_tol)
}

/// Routes carrying more than `flow_floor` vehicles, per OD, by descending flow.
pub fn extract_so_route_set(result: &AssignmentResult, flow_floor: f64) -> Result<Vec<Vec<Route>>> {
    result
        .route_flows
        .iter()
        .enumerate()
        .map(|(i, od)| {
            let mut kept: Vec<&RouteFlow> = od.iter().filter(|rf| rf.flow > flow_floor).collect();
            let od_demand: f64 = od.iter().map(|rf| rf.flow).sum();
            if kept.is_empty() && od_demand > 0.0 {
                return Err(Error::Config(format!(
                    "no route of OD #{i} carries more than {flow_floor} vehicles"
                )));
            }
            kept.sort_by(|a, b| {
                b.flow
                    .total_cmp(&a.flow)
                    .then_with(|| a.route.cmp(&b.route))
            });
            Ok(kept.into_iter().map(|rf| rf.route.clone()).collect())
        })
        .collect()
}
