//! Cayley graphs of SL(2, Z_n) and Cayley graph propagation (CGP).
//!
//! A task graph is padded with virtual nodes up to the order of the smallest
//! sufficiently large Cayley graph, whose edges are then added as a second,
//! typed edge set.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::GraphInstance;

/// 2x2 matrix over Z_n, row-major `[a, b, c, d]`.
pub type Mat2 = [u32; 4];

pub const IDENTITY: Mat2 = [1, 0, 0, 1];

fn mul(x: Mat2, y: Mat2, n: u32) -> Mat2 {
    let [a, b, c, d] = x;
    let [e, f, g, h] = y;
    [
        (a * e + b * g) % n,
        (a * f + b * h) % n,
        (c * e + d * g) % n,
        (c * f + d * h) % n,
    ]
}

pub fn det(m: Mat2, n: u32) -> u32 {
    (m[0] * m[3] + (n - 1) * (m[1] * m[2] % n)) % n
}

/// `A1`, `A2` and their inverses.
pub fn generators(n: u32) -> [Mat2; 4] {
    let neg1 = n - 1;
    [[1, 1, 0, 1], [1, 0, 1, 1], [1, neg1, 0, 1], [1, 0, neg1, 1]]
}

/// Group generated by the four generators, in ascending row-major order.
pub fn sl2_group(n: u32) -> Result<Vec<Mat2>> {
    if n < 2 {
        return Err(Error::contract(format!("modulus must be >= 2, got {n}")));
    }
    let gens = generators(n);
    let mut seen = BTreeSet::from([IDENTITY.map(|x| x % n)]);
    let mut queue = VecDeque::from([IDENTITY.map(|x| x % n)]);
    while let Some(g) = queue.pop_front() {
        for s in gens {
            let h = mul(g, s, n);
            if seen.insert(h) {
                queue.push_back(h);
            }
        }
    }
    Ok(seen.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CayleyGraph {
    pub n: u32,
    pub vertices: Vec<Mat2>,
    /// Undirected pairs with `a < b`, sorted and deduplicated.
    pub edges: Vec<(usize, usize)>,
}

impl CayleyGraph {
    pub fn order(&self) -> usize {
        self.vertices.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.order()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Eccentricity-based diameter; `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let adj = self.adjacency();
        let mut diameter = 0;
        for s in 0..self.order() {
            let dist = bfs_dist(&adj, s);
            if dist.iter().any(Option::is_none) {
                return None;
            }
            diameter = diameter.max(dist.iter().flatten().copied().max().unwrap_or(0));
        }
        Some(diameter)
    }

    pub fn is_connected(&self) -> bool {
        self.order() == 0 || bfs_dist(&self.adjacency(), 0).iter().all(Option::is_some)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.order()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

fn bfs_dist(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn cayley_graph(n: u32) -> Result<CayleyGraph> {
    let vertices = sl2_group(n)?;
    let index: HashMap<Mat2, usize> = vertices.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let mut edges = BTreeSet::new();
    for (i, &g) in vertices.iter().enumerate() {
        for s in generators(n) {
            let j = index[&mul(g, s, n)];
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
    }
    Ok(CayleyGraph {
        n,
        vertices,
        edges: edges.into_iter().collect(),
    })
}

/// |SL(2, Z_n)| = n^3 * prod over primes p | n of (1 - p^-2).
pub fn cayley_order(n: u32) -> usize {
    let mut order = (n as usize).pow(3);
    let mut m = n;
    let mut p = 2;
    while m > 1 {
        if m % p == 0 {
            let p2 = (p * p) as usize;
            order = order / p2 * (p2 - 1);
            while m % p == 0 {
                m /= p;
            }
        }
        p += 1;
    }
    order
}

/// Smallest modulus whose Cayley graph has at least `num_nodes` vertices.
pub fn choose_n(num_nodes: usize) -> Result<u32> {
    if num_nodes == 0 {
        return Err(Error::contract("choose_n needs at least one node"));
    }
    let mut n = 2;
    while cayley_order(n) < num_nodes {
        n += 1;
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Base,
    Cayley,
}

/// Virtual-node padding and Cayley edges for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CgpAugmentation {
    pub modulus: u32,
    pub base_n: usize,
    pub total_n: usize,
    /// 1 for virtual nodes.
    pub virtual_mask: Vec<f64>,
    /// Directed Cayley arcs over combined node indices, both directions.
    pub cayley_edges: Vec<(usize, usize)>,
    /// Self-loops giving each virtual node a base-typed edge.
    pub virtual_loops: Vec<(usize, usize)>,
}

impl CgpAugmentation {
    pub fn num_virtual(&self) -> usize {
        self.total_n - self.base_n
    }

    /// Combined edge list: instance edges, virtual self-loops, Cayley arcs.
    pub fn edges_with_types(&self, base_edges: &[(usize, usize)]) -> Vec<((usize, usize), EdgeType)> {
        base_edges
            .iter()
            .chain(&self.virtual_loops)
            .map(|&e| (e, EdgeType::Base))
            .chain(self.cayley_edges.iter().map(|&e| (e, EdgeType::Cayley)))
            .collect()
    }
}

pub fn augmentation_for(base_n: usize) -> Result<CgpAugmentation> {
    let modulus = choose_n(base_n)?;
    let g = cayley_graph(modulus)?;
    let total_n = g.order();
    let cayley_edges = g
        .edges
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    Ok(CgpAugmentation {
        modulus,
        base_n,
        total_n,
        virtual_mask: (0..total_n).map(|v| f64::from(u8::from(v >= base_n))).collect(),
        cayley_edges,
        virtual_loops: (base_n..total_n).map(|v| (v, v)).collect(),
    })
}

/// Pads `instance` with a Cayley graph. Rejects instances already augmented.
pub fn attach_cgp(instance: &mut GraphInstance) -> Result<&CgpAugmentation> {
    if instance.cgp.is_some() {
        return Err(Error::contract("instance already carries a CGP augmentation"));
    }
    instance.validate()?;
    Ok(instance.cgp.insert(augmentation_for(instance.n)?))
}
