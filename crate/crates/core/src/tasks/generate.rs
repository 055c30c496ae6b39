use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{oracle, Algorithm, Dataset, Feature, GraphInstance, Split};
use crate::error::{Error, Result};

pub const EDGE_WEIGHT_RANGE: (f64, f64) = (0.02, 1.0);

/// Edge probabilities sampled per instance.
pub const P_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Random graph without self-loops. For undirected graphs each pair is
/// listed once with `src < dst`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub directed: bool,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Adjacency {
    /// Directed arcs, both directions for undirected graphs.
    pub fn arcs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for &(s, d, w) in &self.edges {
            out.push((s, d, w));
            if !self.directed {
                out.push((d, s, w));
            }
        }
        out
    }
}

/// Erdős–Rényi graph. Unweighted edges carry weight 1. Acyclic graphs are
/// oriented along a random topological order.
pub fn gen_er_graph<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    weighted: bool,
    acyclic: bool,
    rng: &mut R,
) -> Result<Adjacency> {
    if n < 2 {
        return Err(Error::contract(format!("gen_er_graph needs n >= 2, got {n}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::contract(format!("edge probability {p} outside (0, 1)")));
    }
    let mut rank: Vec<usize> = (0..n).collect();
    if acyclic {
        rank.shuffle(rng);
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() >= p {
                continue;
            }
            let w = if weighted {
                rng.random_range(EDGE_WEIGHT_RANGE.0..=EDGE_WEIGHT_RANGE.1)
            } else {
                1.0
            };
            let (s, d) = if acyclic && rank[i] > rank[j] { (j, i) } else { (i, j) };
            edges.push((s, d, w));
        }
    }
    Ok(Adjacency {
        n,
        directed: acyclic,
        edges,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub algorithm: Algorithm,
    pub split: Split,
    pub count: usize,
    pub sizes: RangeInclusive<usize>,
    pub p_grid: Vec<f64>,
    pub seed: u64,
}

/// Generates `count` instances. Instance `i` draws from its own RNG stream,
/// so any instance can be regenerated in isolation.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.sizes.is_empty() || *spec.sizes.start() < 2 {
        return Err(Error::contract(format!(
            "size range {:?} must be non-empty with sizes >= 2",
            spec.sizes
        )));
    }
    if spec.count == 0 {
        return Err(Error::contract("dataset count must be >= 1"));
    }
    if spec.p_grid.is_empty() {
        return Err(Error::contract("empty edge probability grid"));
    }
    let instances = (0..spec.count)
        .map(|i| {
            let mut rng = instance_rng(spec.seed, i as u64);
            let n = rng.random_range(spec.sizes.clone());
            let p = spec.p_grid[rng.random_range(0..spec.p_grid.len())];
            generate_instance(spec.algorithm, n, p, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        algorithm: spec.algorithm,
        split: spec.split,
        seed: spec.seed,
        instances,
    })
}

pub(crate) fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One instance with inputs sampled and outputs filled in by the oracle.
pub fn generate_instance<R: Rng + ?Sized>(
    algorithm: Algorithm,
    n: usize,
    p: f64,
    rng: &mut R,
) -> Result<GraphInstance> {
    let specs = algorithm.input_specs();
    let spec = |name: &str| specs.iter().find(|s| s.name == name).expect("known input");
    let mut features = BTreeMap::new();
    let denom = (n.max(2) - 1) as f64;
    features.insert(
        "pos".to_string(),
        Feature::new(spec("pos"), (0..n).map(|i| i as f64 / denom).collect()),
    );

    let edges: Vec<(usize, usize)>;
    if algorithm.is_array() {
        edges = dense_edges(n);
        let mut keys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if matches!(algorithm, Algorithm::BinarySearch | Algorithm::ParallelSearch) {
            keys.sort_by(f64::total_cmp);
            let max = keys[n - 1];
            let x = rng.random::<f64>() * max;
            features.insert("target".to_string(), Feature::new(spec("target"), vec![x]));
        }
        features.insert("key".to_string(), Feature::new(spec("key"), keys));
    } else {
        let acyclic = algorithm == Algorithm::DagShortestPaths;
        let adj = gen_er_graph(n, p, algorithm.is_weighted(), acyclic, rng)?;
        let mut weights: Vec<f64>;
        let mut flags: Vec<f64>;
        let mut forward: Vec<f64>;
        if algorithm == Algorithm::FloydWarshall {
            // All pairs are materialised so every output pointer has an edge.
            edges = dense_edges(n);
            let mut w = vec![vec![None; n]; n];
            for (s, d, x) in adj.arcs() {
                w[s][d] = Some(x);
            }
            weights = edges.iter().map(|&(s, d)| w[s][d].unwrap_or(0.0)).collect();
            flags = edges
                .iter()
                .map(|&(s, d)| f64::from(u8::from(w[s][d].is_some())))
                .collect();
            forward = Vec::new();
        } else {
            let mut e = Vec::new();
            weights = Vec::new();
            flags = Vec::new();
            forward = Vec::new();
            for &(s, d, w) in &adj.edges {
                e.push((s, d));
                weights.push(w);
                flags.push(1.0);
                forward.push(1.0);
                // Directed edges are also stored reversed so messages flow
                // both ways; `forward` tells the directions apart.
                e.push((d, s));
                weights.push(w);
                flags.push(1.0);
                forward.push(if adj.directed { 0.0 } else { 1.0 });
            }
            for v in 0..n {
                e.push((v, v));
                weights.push(0.0);
                flags.push(0.0);
                forward.push(0.0);
            }
            edges = e;
            let source = rng.random_range(0..n);
            let mut s = vec![0.0; n];
            s[source] = 1.0;
            features.insert("s".to_string(), Feature::new(spec("s"), s));
        }
        features.insert("adj".to_string(), Feature::new(spec("adj"), std::mem::take(&mut flags)));
        if algorithm.is_weighted() {
            features.insert(
                "weight".to_string(),
                Feature::new(spec("weight"), std::mem::take(&mut weights)),
            );
        }
        if algorithm == Algorithm::DagShortestPaths {
            features.insert(
                "forward".to_string(),
                Feature::new(spec("forward"), std::mem::take(&mut forward)),
            );
        }
    }

    let mut instance = GraphInstance {
        algorithm,
        n,
        edges,
        features,
        cgp: None,
    };
    let outputs = oracle::run_oracle(&instance)?;
    instance.features.extend(outputs);
    Ok(instance)
}

/// Every ordered pair including self-loops, row-major.
pub fn dense_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|s| (0..n).map(move |d| (s, d))).collect()
}
