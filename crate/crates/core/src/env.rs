//! Sequential route-recommendation environment.
//!
//! Travelers arrive one at a time. Each step the agent picks one of the
//! current OD's candidate routes, the route's link volumes grow by one and the
//! reward is the negative marginal travel time of that route.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{total_system_travel_time, DemandTable, FlowState, Network};
use crate::paths::Route;

pub const DEFAULT_K_MAX: usize = 20;

/// Volume at which marginal times are evaluated when a traveler enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalEval {
    /// Volumes include the entering traveler.
    #[default]
    Post,
    /// Volumes before the traveler enters.
    Pre,
}

impl FromStr for MarginalEval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" => Ok(MarginalEval::Post),
            "pre" => Ok(MarginalEval::Pre),
            other => Err(Error::Config(format!(
                "unknown marginal_eval {other:?} (expected post|pre)"
            ))),
        }
    }
}

impl fmt::Display for MarginalEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginalEval::Post => "post",
            MarginalEval::Pre => "pre",
        })
    }
}

impl MarginalEval {
    #[inline]
    fn offset(self) -> f64 {
        match self {
            MarginalEval::Post => 1.0,
            MarginalEval::Pre => 0.0,
        }
    }
}

/// `Σ_{e ∈ route} c_e(v) + v c_e'(v)` with `v` the evaluation volume.
pub fn route_marginal_time(
    net: &Network,
    flows: &FlowState,
    route: &Route,
    eval: MarginalEval,
) -> f64 {
    let v = flows.volumes();
    route.links.iter().fold(0.0, |acc, &l| {
        acc + net.link(l).cost.marginal(v[l] + eval.offset())
    })
}

/// Everything that defines an episode: network, demand, candidate routes and
/// the order in which travelers arrive.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    net: Network,
    demand: DemandTable,
    route_sets: Vec<Vec<Route>>,
    k_max: usize,
    marginal_eval: MarginalEval,
    time_scale: f64,
    volume_scales: Vec<f64>,
    arrival_order: Vec<usize>,
}

impl EpisodeSpec {
    /// Arrivals start in demand-table order; see [`EpisodeSpec::shuffle_arrivals`].
    pub fn new(
        net: Network,
        demand: DemandTable,
        route_sets: Vec<Vec<Route>>,
        k_max: usize,
        marginal_eval: MarginalEval,
    ) -> Result<Self> {
        let counts = demand.integer_demands()?;
        if route_sets.len() != demand.len() {
            return Err(Error::Config(format!(
                "{} route sets for {} OD pairs",
                route_sets.len(),
                demand.len()
            )));
        }
        if k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        for (i, (routes, od)) in route_sets.iter().zip(demand.entries()).enumerate() {
            if od.demand > 0.0 && routes.is_empty() {
                return Err(Error::Config(format!(
                    "OD #{i} has demand but no candidate routes"
                )));
            }
            if routes.len() > k_max {
                return Err(Error::Config(format!(
                    "OD #{i} has {} routes, more than k_max = {k_max}",
                    routes.len()
                )));
            }
            for r in routes {
                if r.origin != od.origin || r.destination != od.destination {
                    return Err(Error::Config(format!(
                        "route for OD #{i} has mismatched endpoints"
                    )));
                }
                r.validate(&net)?;
            }
        }
        let free_flow = net.free_flow_times();
        let max_route = route_sets
            .iter()
            .flatten()
            .map(|r| r.cost(&free_flow))
            .fold(0.0f64, f64::max);
        let time_scale = if max_route > 0.0 { max_route } else { 1.0 };
        let total = demand.total().max(1.0);
        let volume_scales = net
            .links()
            .iter()
            .map(|l| l.cost.capacity().unwrap_or(total))
            .collect();
        let arrival_order = counts
            .iter()
            .enumerate()
            .flat_map(|(od, &n)| std::iter::repeat_n(od, n))
            .collect();
        Ok(EpisodeSpec {
            net,
            demand,
            route_sets,
            k_max,
            marginal_eval,
            time_scale,
            volume_scales,
            arrival_order,
        })
    }

    /// Seeded uniform shuffle of the traveler sequence.
    pub fn shuffle_arrivals(&mut self, seed: u64) {
        self.arrival_order.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.arrival_order.shuffle(&mut rng);
    }

    pub fn set_arrival_order(&mut self, order: Vec<usize>) -> Result<()> {
        let mut a = order.clone();
        let mut b = self.arrival_order.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Config(
                "arrival order is not a permutation of the travelers".into(),
            ));
        }
        self.arrival_order = order;
        Ok(())
    }

    /// Appends a route to an OD's action set. Returns `Ok(false)` when the
    /// route is already present or the set is full.
    pub fn push_route(&mut self, od: usize, route: Route) -> Result<bool> {
        let entry = self
            .demand
            .entries()
            .get(od)
            .ok_or_else(|| Error::Config(format!("no OD #{od}")))?;
        if route.origin != entry.origin || route.destination != entry.destination {
            return Err(Error::Config(format!(
                "route for OD #{od} has mismatched endpoints"
            )));
        }
        route.validate(&self.net)?;
        let set = &mut self.route_sets[od];
        if set.contains(&route) || set.len() >= self.k_max {
            return Ok(false);
        }
        set.push(route);
        Ok(true)
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn demand(&self) -> &DemandTable {
        &self.demand
    }

    pub fn route_sets(&self) -> &[Vec<Route>] {
        &self.route_sets
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn marginal_eval(&self) -> MarginalEval {
        self.marginal_eval
    }

    /// Minutes per unit of normalised time feature.
    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn set_time_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "time scale must be positive, got {scale}"
            )));
        }
        self.time_scale = scale;
        Ok(())
    }

    pub fn volume_scales(&self) -> &[f64] {
        &self.volume_scales
    }

    pub fn arrival_order(&self) -> &[usize] {
        &self.arrival_order
    }

    pub fn num_travelers(&self) -> usize {
        self.arrival_order.len()
    }

    pub fn num_ods(&self) -> usize {
        self.demand.len()
    }

    pub fn state_dim(&self) -> usize {
        3 * self.net.num_links() + self.num_ods() + self.k_max
    }
}

/// Encoded observation plus the valid-action mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub od: usize,
}

impl StateVector {
    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub od: usize,
    pub action: usize,
    pub route: Route,
    /// Total system travel time after this step.
    pub tstt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Minutes, always ≤ 0.
    pub reward: f64,
    /// `None` once the last traveler has been assigned.
    pub next_state: Option<StateVector>,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn is_terminal(&self) -> bool {
        self.next_state.is_none()
    }
}

/// Running episode over a borrowed [`EpisodeSpec`].
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    spec: &'a EpisodeSpec,
    /// Number of travelers already assigned.
    assigned: usize,
    flows: FlowState,
    route_counts: Vec<Vec<usize>>,
}

impl<'a> Environment<'a> {
    pub fn new(spec: &'a EpisodeSpec) -> Self {
        Environment {
            spec,
            assigned: 0,
            flows: FlowState::zeros(spec.net.num_links()),
            route_counts: spec.route_sets.iter().map(|s| vec![0; s.len()]).collect(),
        }
    }

    /// Zeroes the flows and returns the first traveler's state.
    pub fn reset(&mut self) -> Result<StateVector> {
        self.assigned = 0;
        self.flows = FlowState::zeros(self.spec.net.num_links());
        self.route_counts = self
            .spec
            .route_sets
            .iter()
            .map(|s| vec![0; s.len()])
            .collect();
        self.current_state()
            .ok_or_else(|| Error::Config("episode has no travelers".into()))
    }

    pub fn spec(&self) -> &EpisodeSpec {
        self.spec
    }

    /// 1-based index of the traveler awaiting a recommendation.
    pub fn t(&self) -> usize {
        self.assigned + 1
    }

    pub fn flows(&self) -> &FlowState {
        &self.flows
    }

    pub fn is_done(&self) -> bool {
        self.assigned >= self.spec.num_travelers()
    }

    pub fn current_od(&self) -> Option<usize> {
        self.spec.arrival_order.get(self.assigned).copied()
    }

    /// Travelers assigned so far to each route slot, per OD.
    pub fn route_counts(&self) -> &[Vec<usize>] {
        &self.route_counts
    }

    pub fn tstt(&self) -> f64 {
        total_system_travel_time(&self.spec.net, &self.flows).expect("flows sized to the network")
    }

    pub fn current_state(&self) -> Option<StateVector> {
        self.current_od()
            .map(|od| encode_state(self.spec, &self.flows, od))
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let od = self
            .current_od()
            .ok_or_else(|| Error::Structural("step called on a finished episode".into()))?;
        let routes = &self.spec.route_sets[od];
        let route = routes.get(action).ok_or(Error::InvalidAction { action })?;
        let reward =
            -route_marginal_time(&self.spec.net, &self.flows, route, self.spec.marginal_eval);
        let volumes = self.flows.volumes_mut();
        for &l in &route.links {
            volumes[l] += 1.0;
        }
        self.route_counts[od][action] += 1;
        self.assigned += 1;
        let info = StepInfo {
            od,
            action,
            route: route.clone(),
            tstt: self.tstt(),
        };
        Ok(StepOutcome {
            reward,
            next_state: self.current_state(),
            info,
        })
    }
}

/// Builds the normalised observation for a traveler of OD `od` at `flows`.
///
/// Layout: per link `(time, volume, marginal time)`, then the OD one-hot, then
/// one marginal route time per action slot (0 for masked slots).
pub fn encode_state(spec: &EpisodeSpec, flows: &FlowState, od: usize) -> StateVector {
    let net = &spec.net;
    let eval = spec.marginal_eval;
    let inv_t = 1.0 / spec.time_scale;
    let mut features = Vec::with_capacity(spec.state_dim());
    for ((link, &v), &cap) in net
        .links()
        .iter()
        .zip(flows.volumes())
        .zip(&spec.volume_scales)
    {
        features.push(link.cost.time(v) * inv_t);
        features.push(v / cap);
        features.push(link.cost.marginal(v + eval.offset()) * inv_t);
    }
    features.extend((0..spec.num_ods()).map(|i| if i == od { 1.0 } else { 0.0 }));
    let routes = &spec.route_sets[od];
    let mut mask = vec![false; spec.k_max];
    for (slot, valid) in mask.iter_mut().enumerate() {
        match routes.get(slot) {
            Some(r) => {
                features.push(route_marginal_time(net, flows, r, eval) * inv_t);
                *valid = true;
            }
            None => features.push(0.0),
        }
    }
    StateVector { features, mask, od }
}

/// One line of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub od: [String; 2],
    pub action: usize,
    pub reward: f64,
    pub tstt_so_far: f64,
}

impl TraceRecord {
    pub fn from_step(spec: &EpisodeSpec, t: usize, outcome: &StepOutcome) -> Self {
        let e = spec.demand.entries()[outcome.info.od];
        TraceRecord {
            t,
            od: [
                spec.net.node_name(e.origin).to_string(),
                spec.net.node_name(e.destination).to_string(),
            ],
            action: outcome.info.action,
            reward: outcome.reward,
            tstt_so_far: outcome.info.tstt,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
