//! Exact classical algorithms producing the output features of each task.
//!
//! Pointer conventions: roots and unreached nodes point to themselves, and
//! ties between equally good parents go to the lowest node index.

use std::collections::BTreeMap;

use super::{Algorithm, Feature, GraphInstance};
use crate::error::{Error, Result};

/// Output features for `instance`, computed from its inputs only.
pub fn run_oracle(instance: &GraphInstance) -> Result<BTreeMap<String, Feature>> {
    let n = instance.n;
    let alg = instance.algorithm;
    let specs = alg.output_specs();
    let mut out = BTreeMap::new();
    let mut put = |name: &str, values: Vec<f64>| {
        let spec = specs.iter().find(|s| s.name == name).expect("known output");
        out.insert(name.to_string(), Feature::new(spec, values));
    };
    let as_f64 = |v: Vec<usize>| v.into_iter().map(|x| x as f64).collect::<Vec<_>>();
    match alg {
        Algorithm::Bfs => {
            let arcs = graph_arcs(instance, false)?;
            let plain: Vec<(usize, usize)> = arcs.iter().map(|&(s, d, _)| (s, d)).collect();
            put("pi", as_f64(bfs(n, &plain, source(instance)?).0));
        }
        Algorithm::BellmanFord => {
            let arcs = graph_arcs(instance, false)?;
            put("pi", as_f64(bellman_ford(n, &arcs, source(instance)?)?.parents));
        }
        Algorithm::DagShortestPaths => {
            let arcs = graph_arcs(instance, true)?;
            put("pi", as_f64(dag_shortest_paths(n, &arcs, source(instance)?)?.parents));
        }
        Algorithm::MstPrim => {
            let arcs = graph_arcs(instance, false)?;
            put("pi", as_f64(mst_prim(n, &arcs, source(instance)?)));
        }
        Algorithm::FloydWarshall => {
            let arcs = graph_arcs(instance, false)?;
            let fw = floyd_warshall(n, &arcs);
            let pi = instance.edges.iter().map(|&(s, d)| fw.parents[s][d]).collect();
            put("pi_h", as_f64(pi));
        }
        Algorithm::Minimum => {
            let keys = &instance.feature("key")?.values;
            put("min", one_hot(n, argmin(keys)));
        }
        Algorithm::InsertionSort => {
            let keys = &instance.feature("key")?.values;
            put("pred", as_f64(sorted_predecessors(keys)));
        }
        Algorithm::BinarySearch | Algorithm::ParallelSearch => {
            let keys = &instance.feature("key")?.values;
            let x = instance.feature("target")?.values[0];
            let answer = search_answer(keys, x)?;
            put("return", one_hot(n, answer));
            if alg == Algorithm::ParallelSearch {
                put(
                    "smaller",
                    keys.iter().map(|&k| f64::from(u8::from(k < x))).collect(),
                );
            }
        }
    }
    Ok(out)
}

/// Number of iterations the classical algorithm performs on `instance`.
pub fn ground_truth_steps(instance: &GraphInstance) -> Result<usize> {
    let n = instance.n;
    Ok(match instance.algorithm {
        Algorithm::Bfs => {
            let arcs = graph_arcs(instance, false)?;
            let plain: Vec<(usize, usize)> = arcs.iter().map(|&(s, d, _)| (s, d)).collect();
            bfs(n, &plain, source(instance)?).1
        }
        Algorithm::BellmanFord => {
            bellman_ford(n, &graph_arcs(instance, false)?, source(instance)?)?.rounds
        }
        Algorithm::BinarySearch => (usize::BITS - n.leading_zeros()) as usize,
        Algorithm::ParallelSearch => 1,
        Algorithm::FloydWarshall
        | Algorithm::DagShortestPaths
        | Algorithm::MstPrim
        | Algorithm::Minimum
        | Algorithm::InsertionSort => n,
    })
}

fn source(instance: &GraphInstance) -> Result<usize> {
    instance
        .feature("s")?
        .values
        .iter()
        .position(|&v| v == 1.0)
        .ok_or_else(|| Error::contract("source mask has no set entry"))
}

/// Real (non self-loop) arcs of a graph task with their weights.
fn graph_arcs(instance: &GraphInstance, forward_only: bool) -> Result<Vec<(usize, usize, f64)>> {
    let adj = &instance.feature("adj")?.values;
    let weight = instance.features.get("weight").map(|f| &f.values);
    let forward = if forward_only {
        Some(&instance.feature("forward")?.values)
    } else {
        None
    };
    let mut arcs = Vec::new();
    for (i, &(s, d)) in instance.edges.iter().enumerate() {
        if adj[i] != 1.0 || forward.is_some_and(|f| f[i] != 1.0) {
            continue;
        }
        arcs.push((s, d, weight.map_or(1.0, |w| w[i])));
    }
    Ok(arcs)
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Layer-synchronous breadth-first search. Returns parents and the number of
/// rounds until the reached set stops growing.
pub fn bfs(n: usize, arcs: &[(usize, usize)], s: usize) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    let mut reached = vec![false; n];
    reached[s] = true;
    let mut frontier = vec![s];
    let mut rounds = 1;
    loop {
        let mut next: Vec<usize> = Vec::new();
        let mut best = vec![usize::MAX; n];
        for &(u, v) in arcs {
            if !reached[v] && frontier.contains(&u) && u < best[v] {
                best[v] = u;
            }
        }
        for v in 0..n {
            if best[v] != usize::MAX {
                parent[v] = best[v];
                reached[v] = true;
                next.push(v);
            }
        }
        if next.is_empty() {
            return (parent, rounds);
        }
        rounds += 1;
        frontier = next;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPaths {
    /// `f64::INFINITY` for unreachable nodes.
    pub dist: Vec<f64>,
    pub parents: Vec<usize>,
    /// Relaxation rounds including the final one that changes nothing.
    pub rounds: usize,
}

/// Synchronous Bellman-Ford over directed arcs.
pub fn bellman_ford(n: usize, arcs: &[(usize, usize, f64)], s: usize) -> Result<ShortestPaths> {
    let mut dist = vec![f64::INFINITY; n];
    let mut parents: Vec<usize> = (0..n).collect();
    dist[s] = 0.0;
    for round in 1..=n + 1 {
        let prev = dist.clone();
        let mut changed = false;
        for &(u, v, w) in arcs {
            let cand = prev[u] + w;
            if !prev[u].is_finite() || cand >= prev[v] {
                continue;
            }
            if cand < dist[v] || (cand == dist[v] && u < parents[v]) {
                dist[v] = cand;
                parents[v] = u;
                changed = true;
            }
        }
        if !changed {
            return Ok(ShortestPaths {
                dist,
                parents,
                rounds: round,
            });
        }
    }
    Err(Error::contract("bellman_ford input contains a negative cycle"))
}

/// Shortest paths on a DAG by relaxing arcs in topological order.
pub fn dag_shortest_paths(
    n: usize,
    arcs: &[(usize, usize, f64)],
    s: usize,
) -> Result<ShortestPaths> {
    let order = topological_order(n, arcs)?;
    let mut dist = vec![f64::INFINITY; n];
    let mut parents: Vec<usize> = (0..n).collect();
    dist[s] = 0.0;
    for &u in &order {
        if !dist[u].is_finite() {
            continue;
        }
        for &(a, b, w) in arcs {
            if a == u && (dist[u] + w < dist[b] || (dist[u] + w == dist[b] && u < parents[b])) {
                dist[b] = dist[u] + w;
                parents[b] = u;
            }
        }
    }
    Ok(ShortestPaths {
        dist,
        parents,
        rounds: n,
    })
}

/// Kahn's algorithm, smallest ready node first.
pub fn topological_order(n: usize, arcs: &[(usize, usize, f64)]) -> Result<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    for &(_, d, _) in arcs {
        indeg[d] += 1;
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for &(a, b, _) in arcs {
            if a == u {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.insert(b);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::contract("dag_shortest_paths input contains a cycle"));
    }
    Ok(order)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllPairs {
    pub dist: Vec<Vec<f64>>,
    /// `parents[i][j]` is the node preceding `j` on the shortest `i -> j`
    /// path; `i` itself when `j == i` or `j` is unreachable.
    pub parents: Vec<Vec<usize>>,
}

pub fn floyd_warshall(n: usize, arcs: &[(usize, usize, f64)]) -> AllPairs {
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    let mut parents: Vec<Vec<usize>> = (0..n).map(|i| vec![i; n]).collect();
    for i in 0..n {
        dist[i][i] = 0.0;
    }
    for &(s, d, w) in arcs {
        if s != d && w < dist[s][d] {
            dist[s][d] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = dist[i][k] + dist[k][j];
                if via < dist[i][j] {
                    dist[i][j] = via;
                    parents[i][j] = parents[k][j];
                }
            }
        }
    }
    AllPairs { dist, parents }
}

/// Prim's algorithm from `s` over undirected arcs; nodes outside the
/// component of `s` point to themselves.
pub fn mst_prim(n: usize, arcs: &[(usize, usize, f64)], s: usize) -> Vec<usize> {
    let mut parents: Vec<usize> = (0..n).collect();
    let mut key = vec![f64::INFINITY; n];
    let mut in_tree = vec![false; n];
    key[s] = 0.0;
    loop {
        let next = (0..n)
            .filter(|&v| !in_tree[v] && key[v].is_finite())
            .min_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
        let Some(u) = next else {
            return parents;
        };
        in_tree[u] = true;
        for &(a, b, w) in arcs {
            let (a, b) = if a == u { (a, b) } else if b == u { (b, a) } else { continue };
            if !in_tree[b] && (w < key[b] || (w == key[b] && a < parents[b])) {
                key[b] = w;
                parents[b] = a;
            }
        }
    }
}

/// Index of the smallest key; lowest index on ties.
pub fn argmin(keys: &[f64]) -> usize {
    let mut best = 0;
    for (i, &k) in keys.iter().enumerate() {
        if k < keys[best] {
            best = i;
        }
    }
    best
}

/// Node order of a stable ascending sort of `keys`.
pub fn sorted_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    order
}

/// Predecessor pointers of the sorted order; the head points to itself.
pub fn sorted_predecessors(keys: &[f64]) -> Vec<usize> {
    let order = sorted_order(keys);
    let mut pred = vec![0; keys.len()];
    for (rank, &v) in order.iter().enumerate() {
        pred[v] = if rank == 0 { v } else { order[rank - 1] };
    }
    pred
}

/// Inverse of [`sorted_predecessors`]: the node order it encodes.
pub fn order_from_predecessors(pred: &[usize]) -> Result<Vec<usize>> {
    super::check_permutation_pointer(pred)?;
    let n = pred.len();
    let mut next = vec![usize::MAX; n];
    let mut head = 0;
    for v in 0..n {
        if pred[v] == v {
            head = v;
        } else {
            next[pred[v]] = v;
        }
    }
    let mut order = vec![head];
    while next[*order.last().expect("non-empty")] != usize::MAX {
        order.push(next[*order.last().expect("non-empty")]);
    }
    Ok(order)
}

/// Smallest index whose key exceeds `x`, or the last index when none does.
/// Keys must be sorted ascending.
pub fn search_answer(keys: &[f64], x: f64) -> Result<usize> {
    if keys.is_empty() {
        return Err(Error::contract("search over an empty array"));
    }
    if keys.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::contract("search keys are not sorted"));
    }
    Ok(keys.iter().position(|&k| k > x).unwrap_or(keys.len() - 1))
}
