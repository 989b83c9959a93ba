//! Road network, demand, and link-performance evaluation.

mod cost;
pub mod io;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use cost::{link_time, marginal_link_time, CostFunction, BPR_ALPHA, BPR_BETA};
pub use io::{load_network, parse_network, parse_trips, write_network, write_trips};

use crate::error::{Error, Result};

/// Dense node index into [`Network::node_names`].
pub type NodeId = usize;
/// Dense link index; equal to the link's position in [`Network::links`].
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub tail: NodeId,
    pub head: NodeId,
    pub cost: CostFunction,
}

/// Directed road network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_names: Vec<String>,
    node_index: HashMap<String, NodeId>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
}

impl Network {
    /// Builds a network from `(tail, head, cost)` triples. Nodes are indexed in
    /// order of first appearance and link ids follow the input order.
    pub fn from_links<S: AsRef<str>>(records: &[(S, S, CostFunction)]) -> Result<Self> {
        let mut node_names = Vec::new();
        let mut node_index = HashMap::new();
        let mut intern = |name: &str| -> NodeId {
            *node_index.entry(name.to_string()).or_insert_with(|| {
                node_names.push(name.to_string());
                node_names.len() - 1
            })
        };
        let mut links = Vec::with_capacity(records.len());
        let mut seen = HashSet::new();
        for (tail, head, cost) in records {
            let (tail, head) = (tail.as_ref(), head.as_ref());
            if tail == head {
                return Err(Error::Validation(format!("self-loop on node {tail}")));
            }
            cost.validate()
                .map_err(|e| Error::Validation(format!("link {tail}->{head}: {e}")))?;
            let (t, h) = (intern(tail), intern(head));
            if !seen.insert((t, h)) {
                return Err(Error::Validation(format!("duplicate link {tail}->{head}")));
            }
            links.push(Link {
                id: links.len(),
                tail: t,
                head: h,
                cost: *cost,
            });
        }
        let mut out_links = vec![Vec::new(); node_names.len()];
        for link in &links {
            out_links[link.tail].push(link.id);
        }
        Ok(Network {
            node_names,
            node_index,
            links,
            out_links,
        })
    }

    /// Copy of this network without the given links; remaining links are renumbered
    /// in their original order.
    pub fn without_links(&self, removed: &[LinkId]) -> Result<Self> {
        let records: Vec<(String, String, CostFunction)> = self
            .links
            .iter()
            .filter(|l| !removed.contains(&l.id))
            .map(|l| {
                (
                    self.node_names[l.tail].clone(),
                    self.node_names[l.head].clone(),
                    l.cost,
                )
            })
            .collect();
        Network::from_links(&records)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.node_names[node]
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_index.get(name).copied()
    }

    pub fn find_link(&self, tail: NodeId, head: NodeId) -> Option<LinkId> {
        self.out_links[tail]
            .iter()
            .copied()
            .find(|&l| self.links[l].head == head)
    }

    /// Per-link plain travel times at the given volumes.
    pub fn link_times(&self, flows: &FlowState) -> Vec<f64> {
        self.links
            .iter()
            .zip(flows.volumes())
            .map(|(l, &x)| l.cost.time(x))
            .collect()
    }

    /// Per-link marginal travel times at the given volumes.
    pub fn marginal_times(&self, flows: &FlowState) -> Vec<f64> {
        self.links
            .iter()
            .zip(flows.volumes())
            .map(|(l, &x)| l.cost.marginal(x))
            .collect()
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.cost.free_flow_time()).collect()
    }

    pub(crate) fn check_flows(&self, flows: &FlowState) -> Result<()> {
        if flows.len() != self.num_links() {
            return Err(Error::Structural(format!(
                "flow vector has {} entries but network has {} links",
                flows.len(),
                self.num_links()
            )));
        }
        Ok(())
    }
}

/// One origin-destination demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdDemand {
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
}

/// Ordered OD demand sequence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandTable {
    entries: Vec<OdDemand>,
}

impl DemandTable {
    pub fn new(net: &Network, entries: Vec<OdDemand>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.origin >= net.num_nodes() || e.destination >= net.num_nodes() {
                return Err(Error::Validation(format!(
                    "OD ({}, {}) references a node outside the network",
                    e.origin, e.destination
                )));
            }
            if e.origin == e.destination {
                return Err(Error::Validation(format!(
                    "OD with identical origin and destination {}",
                    net.node_name(e.origin)
                )));
            }
            if !e.demand.is_finite() || e.demand < 0.0 {
                return Err(Error::Validation(format!(
                    "demand for ({}, {}) must be finite and nonnegative",
                    net.node_name(e.origin),
                    net.node_name(e.destination)
                )));
            }
            if !seen.insert((e.origin, e.destination)) {
                return Err(Error::Validation(format!(
                    "duplicate OD ({}, {})",
                    net.node_name(e.origin),
                    net.node_name(e.destination)
                )));
            }
        }
        Ok(DemandTable { entries })
    }

    /// Builds from node names; unknown names are validation errors.
    pub fn from_names<S: AsRef<str>>(net: &Network, records: &[(S, S, f64)]) -> Result<Self> {
        let lookup = |name: &str| {
            net.node_id(name)
                .ok_or_else(|| Error::Validation(format!("demand references unknown node {name}")))
        };
        let entries = records
            .iter()
            .map(|(o, d, q)| {
                Ok(OdDemand {
                    origin: lookup(o.as_ref())?,
                    destination: lookup(d.as_ref())?,
                    demand: *q,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DemandTable::new(net, entries)
    }

    pub fn entries(&self) -> &[OdDemand] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.demand).sum()
    }

    /// Demands as whole travelers; fails if any entry is fractional.
    pub fn integer_demands(&self) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| {
                if e.demand.fract() == 0.0 {
                    Ok(e.demand as usize)
                } else {
                    Err(Error::Validation(format!(
                        "sequential assignment needs integer demand, got {}",
                        e.demand
                    )))
                }
            })
            .collect()
    }
}

/// Per-link volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    volumes: Vec<f64>,
}

impl FlowState {
    pub fn zeros(num_links: usize) -> Self {
        FlowState {
            volumes: vec![0.0; num_links],
        }
    }

    pub fn from_volumes(volumes: Vec<f64>) -> Result<Self> {
        if volumes.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Domain("link volumes must be nonnegative".into()));
        }
        Ok(FlowState { volumes })
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub(crate) fn volumes_mut(&mut self) -> &mut [f64] {
        &mut self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// `Σ_e x_e · c_e(x_e)`, summed in ascending link id.
pub fn total_system_travel_time(net: &Network, flows: &FlowState) -> Result<f64> {
    net.check_flows(flows)?;
    let mut total = 0.0;
    for (link, &x) in net.links().iter().zip(flows.volumes()) {
        total += x * link_time(&link.cost, x)?;
    }
    Ok(total)
}
