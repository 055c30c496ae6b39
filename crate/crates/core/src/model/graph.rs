use std::sync::Arc;

use super::{CgpSchedule, ModelConfig, ProcessorKind};
use crate::error::{Error, Result};
use crate::expander::{augmentation_for, EdgeType};
use crate::tasks::GraphInstance;

/// Edges taking part in one message-passing pass.
#[derive(Clone, Debug)]
pub struct Pass {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// Rows of the combined edge embedding used by this pass.
    pub rows: Arc<[usize]>,
}

/// Index lists for dense triplet messages over `(u, v, w)`, `w` fastest.
#[derive(Clone, Debug)]
pub struct TripletIndex {
    pub u: Arc<[usize]>,
    pub v: Arc<[usize]>,
    pub w: Arc<[usize]>,
    /// `u * n + v`: the pair receiving the max over `w`.
    pub uv: Arc<[usize]>,
    pub vw: Arc<[usize]>,
}

/// Node and edge layout the network runs on: the instance graph, optionally
/// padded with virtual nodes and Cayley edges.
///
/// Base nodes occupy indices `0..n_base` and instance edges occupy rows
/// `0..m_base` of the combined edge list.
#[derive(Clone, Debug)]
pub struct GraphView {
    pub n_base: usize,
    pub n_total: usize,
    pub m_base: usize,
    pub edges: Vec<(usize, usize)>,
    pub edge_types: Vec<EdgeType>,
    pub passes: Vec<Pass>,
    /// `src * n_total + dst` for every combined edge.
    pub pair_index: Arc<[usize]>,
    pub triplets: Option<TripletIndex>,
}

impl GraphView {
    pub fn new(instance: &GraphInstance, cfg: &ModelConfig) -> Result<Self> {
        let n_base = instance.n;
        let m_base = instance.edges.len();
        let (n_total, typed) = if cfg.cgp {
            let aug = match &instance.cgp {
                Some(a) => a.clone(),
                None => augmentation_for(n_base)?,
            };
            (aug.total_n, aug.edges_with_types(&instance.edges))
        } else {
            (
                n_base,
                instance.edges.iter().map(|&e| (e, EdgeType::Base)).collect(),
            )
        };
        let edges: Vec<(usize, usize)> = typed.iter().map(|&(e, _)| e).collect();
        let edge_types: Vec<EdgeType> = typed.iter().map(|&(_, t)| t).collect();

        let pass_over = |keep: &dyn Fn(EdgeType) -> bool| {
            let rows: Vec<usize> = (0..edges.len()).filter(|&i| keep(edge_types[i])).collect();
            Pass {
                src: rows.iter().map(|&i| edges[i].0).collect(),
                dst: rows.iter().map(|&i| edges[i].1).collect(),
                rows: rows.into(),
            }
        };
        let passes = if cfg.cgp && cfg.cgp_schedule == CgpSchedule::Sequential {
            vec![
                pass_over(&|t| t == EdgeType::Base),
                pass_over(&|t| t == EdgeType::Cayley),
            ]
        } else {
            vec![pass_over(&|_| true)]
        };

        let triplets = if cfg.processor == ProcessorKind::Triplet {
            if n_total > cfg.triplet_max_nodes {
                return Err(Error::Capability(format!(
                    "triplet processor limited to {} nodes, graph has {n_total}",
                    cfg.triplet_max_nodes
                )));
            }
            Some(triplet_index(n_total))
        } else {
            None
        };

        Ok(GraphView {
            n_base,
            n_total,
            m_base,
            pair_index: edges.iter().map(|&(s, d)| s * n_total + d).collect(),
            edges,
            edge_types,
            passes,
            triplets,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge-type id per combined edge (0 base, 1 Cayley).
    pub fn type_ids(&self) -> Vec<usize> {
        self.edge_types
            .iter()
            .map(|t| match t {
                EdgeType::Base => 0,
                EdgeType::Cayley => 1,
            })
            .collect()
    }
}

fn triplet_index(n: usize) -> TripletIndex {
    let total = n * n * n;
    let mut u = Vec::with_capacity(total);
    let mut v = Vec::with_capacity(total);
    let mut w = Vec::with_capacity(total);
    let mut uv = Vec::with_capacity(total);
    let mut vw = Vec::with_capacity(total);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                u.push(a);
                v.push(b);
                w.push(c);
                uv.push(a * n + b);
                vw.push(b * n + c);
            }
        }
    }
    TripletIndex {
        u: u.into(),
        v: v.into(),
        w: w.into(),
        uv: uv.into(),
        vw: vw.into(),
    }
}
