use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqassign::network::{CostFunction, Network};
use seqassign::paths::{k_shortest_paths, shortest_path, Route};
use seqassign::Error;

pub fn random_graph(rng: &mut ChaCha8Rng) -> (Network, Vec<f64>) {
    let n = rng.gen_range(2..=10);
    let density = rng.gen_range(0.15..0.6);
    let mut records = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(density) {
                records.push((
                    format!("n{u}"),
                    format!("n{v}"),
                    CostFunction::affine(1.0, 0.0),
                ));
            }
        }
    }
    if records.is_empty() {
        records.push(("n0".into(), "n1".into(), CostFunction::affine(1.0, 0.0)));
    }
    let net = Network::from_links(&records).unwrap();
    // Small integers make equal-cost ties common.
    let costs = (0..net.num_links())
        .map(|_| rng.gen_range(0..6) as f64)
        .collect();
    (net, costs)
}

pub fn enumerate(
    net: &Network,
    costs: &[f64],
    origin: usize,
    destination: usize,
) -> Vec<(f64, Vec<usize>)> {
    fn dfs(
        net: &Network,
        at: usize,
        destination: usize,
        visited: &mut Vec<bool>,
        links: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if at == destination {
            out.push(links.clone());
            return;
        }
        for &l in net.out_links(at) {
            let v = net.link(l).head;
            if !visited[v] {
                visited[v] = true;
                links.push(l);
                dfs(net, v, destination, visited, links, out);
                links.pop();
                visited[v] = false;
            }
        }
    }
    let mut visited = vec![false; net.num_nodes()];
    visited[origin] = true;
    let mut paths = Vec::new();
    if origin != destination {
        dfs(
            net,
            origin,
            destination,
            &mut visited,
            &mut Vec::new(),
            &mut paths,
        );
    }
    let mut scored: Vec<(f64, Vec<usize>)> = paths
        .into_iter()
        .map(|p| (p.iter().fold(0.0, |acc, &l| acc + costs[l]), p))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    scored
}

/// Brute-force enumeration of simple paths against `shortest_path` and
/// `k_shortest_paths` on `graphs` random graphs of at most ten nodes.
/// Returns the number of origin-destination pairs compared.
pub fn check_random_graphs(graphs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared_pairs = 0;
    for _ in 0..graphs {
        let (net, costs) = random_graph(&mut rng);
        let n = net.num_nodes();
        for _ in 0..3 {
            let o = rng.gen_range(0..n);
            let d = rng.gen_range(0..n);
            if o == d {
                continue;
            }
            let all = enumerate(&net, &costs, o, d);
            match shortest_path(&net, &costs, o, d) {
                Ok(r) => {
                    assert_eq!(r.links, all[0].1, "shortest path");
                    assert_eq!(r.cost(&costs), all[0].0);
                }
                Err(Error::NoPath { .. }) => assert!(all.is_empty()),
                Err(e) => panic!("{e}"),
            }
            for k in [1, 2, 3, 5, 8] {
                let ksp: Vec<(f64, Vec<usize>)> = k_shortest_paths(&net, &costs, o, d, k)
                    .unwrap()
                    .into_iter()
                    .map(|r: Route| (r.cost(&costs), r.links))
                    .collect();
                let expect: Vec<(f64, Vec<usize>)> = all.iter().take(k).cloned().collect();
                assert_eq!(ksp, expect, "k = {k}");
            }
            compared_pairs += 1;
        }
    }
    compared_pairs
}
