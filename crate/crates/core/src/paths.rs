//! Shortest and k-shortest loopless paths under caller-supplied link costs.
//!
//! Ties between equal-cost paths go to the lexicographically smallest
//! link-id sequence, so route sets are reproducible.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LinkId, Network, NodeId};

/// Loopless directed route between an origin and a destination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Route {
    pub origin: NodeId,
    pub destination: NodeId,
    pub links: Vec<LinkId>,
}

impl Route {
    /// Checks connectivity and looplessness against `net`.
    pub fn new(
        net: &Network,
        origin: NodeId,
        destination: NodeId,
        links: Vec<LinkId>,
    ) -> Result<Self> {
        let route = Route {
            origin,
            destination,
            links,
        };
        route.validate(net)?;
        Ok(route)
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Validation("route has no links".into()));
        }
        let mut at = self.origin;
        let mut visited = vec![false; net.num_nodes()];
        visited[at] = true;
        for &l in &self.links {
            if l >= net.num_links() {
                return Err(Error::Validation(format!(
                    "route references unknown link {l}"
                )));
            }
            let link = net.link(l);
            if link.tail != at {
                return Err(Error::Validation(format!(
                    "route is disconnected at link {l}"
                )));
            }
            at = link.head;
            if std::mem::replace(&mut visited[at], true) {
                return Err(Error::Validation(format!(
                    "route revisits node {}",
                    net.node_name(at)
                )));
            }
        }
        if at != self.destination {
            return Err(Error::Validation(
                "route does not end at its destination".into(),
            ));
        }
        Ok(())
    }

    /// Sum of `costs` along the route, in route order.
    pub fn cost(&self, costs: &[f64]) -> f64 {
        self.links.iter().fold(0.0, |acc, &l| acc + costs[l])
    }

    pub fn nodes(&self, net: &Network) -> Vec<NodeId> {
        std::iter::once(self.origin)
            .chain(self.links.iter().map(|&l| net.link(l).head))
            .collect()
    }

    /// Node names joined without separator when every name is a single
    /// character (`ACDB`), otherwise with `-`.
    pub fn label(&self, net: &Network) -> String {
        let names: Vec<&str> = self
            .nodes(net)
            .into_iter()
            .map(|n| net.node_name(n))
            .collect();
        if names.iter().all(|n| n.chars().count() == 1) {
            names.concat()
        } else {
            names.join("-")
        }
    }
}

fn check_costs(net: &Network, costs: &[f64]) -> Result<()> {
    if costs.len() != net.num_links() {
        return Err(Error::Structural(format!(
            "cost vector has {} entries but network has {} links",
            costs.len(),
            net.num_links()
        )));
    }
    if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(Error::Domain(format!(
            "link costs must be finite and nonnegative, got {c}"
        )));
    }
    Ok(())
}

#[derive(Clone)]
struct Label {
    dist: f64,
    links: Vec<LinkId>,
}

fn label_less(a: &Label, b: &Label) -> bool {
    match a.dist.total_cmp(&b.dist) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.links < b.links,
    }
}

/// Dijkstra from `origin` carrying full path labels so that ties resolve to the
/// lexicographically smallest link sequence.
fn shortest_tree(
    net: &Network,
    costs: &[f64],
    origin: NodeId,
    banned_nodes: &[bool],
    banned_links: &[bool],
) -> Vec<Option<Label>> {
    let n = net.num_nodes();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut settled = vec![false; n];
    labels[origin] = Some(Label {
        dist: 0.0,
        links: Vec::new(),
    });
    loop {
        let mut best: Option<NodeId> = None;
        for v in 0..n {
            if settled[v] {
                continue;
            }
            if let Some(lv) = &labels[v] {
                let better = match best {
                    None => true,
                    Some(b) => label_less(lv, labels[b].as_ref().expect("best has a label")),
                };
                if better {
                    best = Some(v);
                }
            }
        }
        let Some(u) = best else { break };
        settled[u] = true;
        let lu = labels[u].clone().expect("settled node has a label");
        for &l in net.out_links(u) {
            if banned_links[l] {
                continue;
            }
            let v = net.link(l).head;
            if settled[v] || banned_nodes[v] || v == origin {
                continue;
            }
            if lu.links.iter().any(|&pl| net.link(pl).head == v) {
                continue;
            }
            let mut cand = Label {
                dist: lu.dist + costs[l],
                links: Vec::with_capacity(lu.links.len() + 1),
            };
            cand.links.extend_from_slice(&lu.links);
            cand.links.push(l);
            let replace = match &labels[v] {
                None => true,
                Some(old) => label_less(&cand, old),
            };
            if replace {
                labels[v] = Some(cand);
            }
        }
    }
    labels
}

fn masked_path(
    net: &Network,
    costs: &[f64],
    origin: NodeId,
    destination: NodeId,
    banned_nodes: &[bool],
    banned_links: &[bool],
) -> Option<Vec<LinkId>> {
    if origin == destination {
        return None;
    }
    shortest_tree(net, costs, origin, banned_nodes, banned_links)
        .swap_remove(destination)
        .map(|l| l.links)
}

/// Shortest loopless routes from `origin` to every node (`None` when
/// unreachable or equal to the origin).
pub fn shortest_path_tree(
    net: &Network,
    costs: &[f64],
    origin: NodeId,
) -> Result<Vec<Option<Route>>> {
    check_costs(net, costs)?;
    let none_nodes = vec![false; net.num_nodes()];
    let none_links = vec![false; net.num_links()];
    Ok(shortest_tree(net, costs, origin, &none_nodes, &none_links)
        .into_iter()
        .enumerate()
        .map(|(d, label)| {
            label.filter(|l| !l.links.is_empty()).map(|l| Route {
                origin,
                destination: d,
                links: l.links,
            })
        })
        .collect())
}

pub fn shortest_path(
    net: &Network,
    costs: &[f64],
    origin: NodeId,
    destination: NodeId,
) -> Result<Route> {
    check_costs(net, costs)?;
    let no_path = || Error::NoPath {
        origin: net.node_name(origin).to_string(),
        destination: net.node_name(destination).to_string(),
    };
    if origin == destination {
        return Err(no_path());
    }
    let links = masked_path(
        net,
        costs,
        origin,
        destination,
        &vec![false; net.num_nodes()],
        &vec![false; net.num_links()],
    )
    .ok_or_else(no_path)?;
    Ok(Route {
        origin,
        destination,
        links,
    })
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    links: Vec<LinkId>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so the max-heap pops the cheapest, then lexicographically smallest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.links.cmp(&self.links))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Yen's k shortest loopless paths, sorted by `(cost, link sequence)`.
/// Unreachable pairs give an empty list.
pub fn k_shortest_paths(
    net: &Network,
    costs: &[f64],
    origin: NodeId,
    destination: NodeId,
    k: usize,
) -> Result<Vec<Route>> {
    check_costs(net, costs)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let route = |links: Vec<LinkId>| Route {
        origin,
        destination,
        links,
    };
    let mut banned_nodes = vec![false; net.num_nodes()];
    let mut banned_links = vec![false; net.num_links()];
    let Some(first) = masked_path(
        net,
        costs,
        origin,
        destination,
        &banned_nodes,
        &banned_links,
    ) else {
        return Ok(Vec::new());
    };
    let mut accepted: Vec<Vec<LinkId>> = vec![first];
    let mut seen: HashSet<Vec<LinkId>> = accepted.iter().cloned().collect();
    let mut heap = BinaryHeap::new();

    while accepted.len() < k {
        let prev = accepted.last().expect("at least one accepted path").clone();
        let mut spur_node = origin;
        for i in 0..prev.len() {
            let root = &prev[..i];
            banned_nodes.iter_mut().for_each(|b| *b = false);
            banned_links.iter_mut().for_each(|b| *b = false);
            for p in &accepted {
                if p.len() > i && &p[..i] == root {
                    banned_links[p[i]] = true;
                }
            }
            banned_nodes[origin] = true;
            for &l in root {
                banned_nodes[net.link(l).head] = true;
            }
            banned_nodes[spur_node] = false;
            if let Some(spur) = masked_path(
                net,
                costs,
                spur_node,
                destination,
                &banned_nodes,
                &banned_links,
            ) {
                let mut links = root.to_vec();
                links.extend(spur);
                if seen.insert(links.clone()) {
                    let cost = route(links.clone()).cost(costs);
                    heap.push(Candidate { cost, links });
                }
            }
            spur_node = net.link(prev[i]).head;
        }
        match heap.pop() {
            Some(c) => accepted.push(c.links),
            None => break,
        }
    }
    Ok(accepted.into_iter().map(route).collect())
}
