//! Algorithm task specifications, instance generation, ground-truth oracles
//! and the dataset file format.
//!
//! Only input and output features are produced; no intermediate algorithm
//! state is generated.

mod generate;
mod io;
pub mod oracle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expander::CgpAugmentation;

pub use generate::{gen_er_graph, make_dataset, Adjacency, DatasetSpec, EDGE_WEIGHT_RANGE, P_GRID};
pub use io::{read_dataset, write_dataset, DATASET_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bfs,
    BellmanFord,
    FloydWarshall,
    DagShortestPaths,
    MstPrim,
    Minimum,
    InsertionSort,
    BinarySearch,
    ParallelSearch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Bfs,
        Algorithm::BellmanFord,
        Algorithm::FloydWarshall,
        Algorithm::DagShortestPaths,
        Algorithm::MstPrim,
        Algorithm::Minimum,
        Algorithm::InsertionSort,
        Algorithm::BinarySearch,
        Algorithm::ParallelSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bfs => "bfs",
            Algorithm::BellmanFord => "bellman_ford",
            Algorithm::FloydWarshall => "floyd_warshall",
            Algorithm::DagShortestPaths => "dag_shortest_paths",
            Algorithm::MstPrim => "mst_prim",
            Algorithm::Minimum => "minimum",
            Algorithm::InsertionSort => "insertion_sort",
            Algorithm::BinarySearch => "binary_search",
            Algorithm::ParallelSearch => "parallel_search",
        }
    }

    /// Array tasks run on a fully connected graph.
    pub fn is_array(self) -> bool {
        matches!(
            self,
            Algorithm::Minimum
                | Algorithm::InsertionSort
                | Algorithm::BinarySearch
                | Algorithm::ParallelSearch
        )
    }

    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            Algorithm::BellmanFord
                | Algorithm::FloydWarshall
                | Algorithm::DagShortestPaths
                | Algorithm::MstPrim
        )
    }

    /// Feature schema shared by every instance of this algorithm.
    pub fn specs(self) -> Vec<FeatureSpec> {
        use DType::*;
        use Location::*;
        use Stage::*;
        let mut specs = vec![FeatureSpec::new("pos", Input, Node, Scalar)];
        let graph_inputs = |specs: &mut Vec<FeatureSpec>, source: bool| {
            if source {
                specs.push(FeatureSpec::new("s", Input, Node, MaskOne));
            }
            specs.push(FeatureSpec::new("adj", Input, Edge, Mask));
            if self.is_weighted() {
                specs.push(FeatureSpec::new("weight", Input, Edge, Scalar));
            }
        };
        match self {
            Algorithm::Bfs | Algorithm::BellmanFord | Algorithm::MstPrim => {
                graph_inputs(&mut specs, true);
                specs.push(FeatureSpec::new("pi", Output, Node, Pointer));
            }
            Algorithm::DagShortestPaths => {
                graph_inputs(&mut specs, true);
                specs.push(FeatureSpec::new("forward", Input, Edge, Mask));
                specs.push(FeatureSpec::new("pi", Output, Node, Pointer));
            }
            Algorithm::FloydWarshall => {
                graph_inputs(&mut specs, false);
                specs.push(FeatureSpec::new("pi_h", Output, Edge, Pointer));
            }
            Algorithm::Minimum => {
                specs.push(FeatureSpec::new("key", Input, Node, Scalar));
                specs.push(FeatureSpec::new("min", Output, Node, MaskOne));
            }
            Algorithm::InsertionSort => {
                specs.push(FeatureSpec::new("key", Input, Node, Scalar));
                specs.push(FeatureSpec::new("pred", Output, Node, PermutationPointer));
            }
            Algorithm::BinarySearch | Algorithm::ParallelSearch => {
                specs.push(FeatureSpec::new("key", Input, Node, Scalar));
                specs.push(FeatureSpec::new("target", Input, Graph, Scalar));
                specs.push(FeatureSpec::new("return", Output, Node, MaskOne));
                if self == Algorithm::ParallelSearch {
                    specs.push(FeatureSpec::new("smaller", Output, Node, Mask));
                }
            }
        }
        specs
    }

    pub fn input_specs(self) -> Vec<FeatureSpec> {
        self.specs()
            .into_iter()
            .filter(|s| s.stage == Stage::Input)
            .collect()
    }

    pub fn output_specs(self) -> Vec<FeatureSpec> {
        self.specs()
            .into_iter()
            .filter(|s| s.stage == Stage::Output)
            .collect()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Node,
    Edge,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DType {
    Scalar,
    Mask,
    MaskOne,
    Categorical(usize),
    Pointer,
    PermutationPointer,
}

impl DType {
    /// Values stored per location element.
    pub fn width(self) -> usize {
        match self {
            DType::Categorical(k) => k,
            _ => 1,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Scalar => f.write_str("scalar"),
            DType::Mask => f.write_str("mask"),
            DType::MaskOne => f.write_str("mask_one"),
            DType::Categorical(k) => write!(f, "categorical({k})"),
            DType::Pointer => f.write_str("pointer"),
            DType::PermutationPointer => f.write_str("permutation_pointer"),
        }
    }
}

impl From<DType> for String {
    fn from(d: DType) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for DType {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Ok(match s.as_str() {
            "scalar" => DType::Scalar,
            "mask" => DType::Mask,
            "mask_one" => DType::MaskOne,
            "pointer" => DType::Pointer,
            "permutation_pointer" => DType::PermutationPointer,
            other => {
                let k = other
                    .strip_prefix("categorical(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| format!("unknown dtype `{other}`"))?;
                DType::Categorical(k)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub name: String,
    pub stage: Stage,
    pub location: Location,
    pub dtype: DType,
}

impl FeatureSpec {
    pub fn new(name: &str, stage: Stage, location: Location, dtype: DType) -> Self {
        FeatureSpec {
            name: name.to_string(),
            stage,
            location,
            dtype,
        }
    }
}

/// One feature array attached to an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feature {
    pub stage: Stage,
    pub location: Location,
    pub dtype: DType,
    pub values: Vec<f64>,
}

impl Feature {
    pub fn new(spec: &FeatureSpec, values: Vec<f64>) -> Self {
        Feature {
            stage: spec.stage,
            location: spec.location,
            dtype: spec.dtype,
            values,
        }
    }

    /// Values as node indices.
    pub fn indices(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }
}

/// One task sample.
///
/// `edges` is directed and always contains the self-loop `(v, v)` for every
/// node; undirected inputs appear in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInstance {
    pub algorithm: Algorithm,
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: BTreeMap<String, Feature>,
    /// Set once the instance has been padded to a Cayley graph.
    pub cgp: Option<CgpAugmentation>,
}

impl GraphInstance {
    pub fn feature(&self, name: &str) -> Result<&Feature> {
        self.features.get(name).ok_or_else(|| {
            Error::contract(format!("{} instance lacks feature `{name}`", self.algorithm))
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Index of edge `(src, dst)`, if present.
    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (src, dst))
    }

    /// Ground-truth number of algorithm iterations, used for the unrolled
    /// baseline.
    pub fn ground_truth_steps(&self) -> Result<usize> {
        oracle::ground_truth_steps(self)
    }

    /// Checks structural invariants and that features match the schema.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::contract("instance with zero nodes"));
        }
        let mut has_loop = vec![false; n];
        for &(s, d) in &self.edges {
            if s >= n || d >= n {
                return Err(Error::contract(format!("edge ({s},{d}) outside {n} nodes")));
            }
            if s == d {
                has_loop[s] = true;
            }
        }
        if let Some(v) = has_loop.iter().position(|&h| !h) {
            return Err(Error::contract(format!("node {v} lacks a self-loop")));
        }
        let edge_set: std::collections::HashSet<(usize, usize)> =
            self.edges.iter().copied().collect();
        for spec in self.algorithm.specs() {
            let f = self.feature(&spec.name)?;
            if f.stage != spec.stage || f.location != spec.location || f.dtype != spec.dtype {
                return Err(Error::contract(format!(
                    "feature `{}` does not match the {} schema",
                    spec.name, self.algorithm
                )));
            }
            let elems = match spec.location {
                Location::Node => n,
                Location::Edge => self.edges.len(),
                Location::Graph => 1,
            };
            if f.values.len() != elems * spec.dtype.width() {
                return Err(Error::contract(format!(
                    "feature `{}` has {} values, expected {}",
                    spec.name,
                    f.values.len(),
                    elems * spec.dtype.width()
                )));
            }
            match spec.dtype {
                DType::Mask | DType::MaskOne => {
                    if f.values.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::contract(format!("`{}` is not binary", spec.name)));
                    }
                    if spec.dtype == DType::MaskOne
                        && f.values.iter().filter(|&&v| v == 1.0).count() != 1
                    {
                        return Err(Error::contract(format!(
                            "`{}` must have exactly one set entry",
                            spec.name
                        )));
                    }
                }
                DType::Pointer | DType::PermutationPointer => {
                    for (i, &v) in f.values.iter().enumerate() {
                        if v.fract() != 0.0 || v < 0.0 || v as usize >= n {
                            return Err(Error::contract(format!(
                                "`{}` holds invalid node index {v}",
                                spec.name
                            )));
                        }
                        let target = v as usize;
                        let owner = match spec.location {
                            Location::Node => i,
                            // Edge pointers name a node reaching the edge's head.
                            Location::Edge => self.edges[i].1,
                            Location::Graph => continue,
                        };
                        let needed = match spec.location {
                            Location::Edge => (target, owner),
                            _ => (owner, target),
                        };
                        if !edge_set.contains(&needed) {
                            return Err(Error::contract(format!(
                                "`{}` pointer {:?} is not along an edge",
                                spec.name, needed
                            )));
                        }
                    }
                    if spec.dtype == DType::PermutationPointer {
                        check_permutation_pointer(&f.indices())?;
                    }
                }
                DType::Scalar | DType::Categorical(_) => {}
            }
        }
        Ok(())
    }
}

/// A predecessor array encodes a total order iff exactly one node points to
/// itself and following pointers from any node reaches it.
pub fn check_permutation_pointer(pred: &[usize]) -> Result<()> {
    let n = pred.len();
    let heads: Vec<usize> = (0..n).filter(|&v| pred[v] == v).collect();
    if heads.len() != 1 {
        return Err(Error::contract(format!(
            "permutation pointer has {} self-loops",
            heads.len()
        )));
    }
    let mut claimed = vec![false; n];
    for v in 0..n {
        if pred[v] != v {
            if claimed[pred[v]] {
                return Err(Error::contract("two nodes claim the same predecessor"));
            }
            claimed[pred[v]] = true;
        }
    }
    for start in 0..n {
        let mut v = start;
        for _ in 0..n {
            v = pred[v];
        }
        if v != heads[0] {
            return Err(Error::contract("permutation pointer contains a cycle"));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub algorithm: Algorithm,
    pub split: Split,
    pub seed: u64,
    pub instances: Vec<GraphInstance>,
}
