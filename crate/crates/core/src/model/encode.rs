use super::{Bound, GraphView};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tasks::{GraphInstance, Location};

/// Encoded node (`u`, `[n_total, d]`) and edge (`e`, `[edges, d]`) features.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub u: Var,
    pub e: Var,
}

/// Projects every input feature linearly and sums per location. Graph-level
/// inputs are broadcast to base nodes; virtual nodes and Cayley edges get no
/// task features, only the edge-type embedding.
pub fn encode(
    tape: &mut Tape,
    p: &Bound,
    view: &GraphView,
    instance: &GraphInstance,
) -> Result<Encoded> {
    let d = p.config.latent_dim;
    let (n, m) = (view.n_base, view.m_base);
    let mut node: Option<Var> = None;
    let mut edge: Option<Var> = None;
    let mut graph: Option<Var> = None;
    for spec in instance.algorithm.input_specs() {
        let f = instance.feature(&spec.name)?;
        let rows = match spec.location {
            Location::Node => n,
            Location::Edge => m,
            Location::Graph => 1,
        };
        let width = spec.dtype.width();
        if f.values.len() != rows * width {
            return Err(Error::contract(format!(
                "input `{}` has {} values, expected {}",
                spec.name,
                f.values.len(),
                rows * width
            )));
        }
        let x = tape.constant(Tensor::new(vec![rows, width], f.values.clone())?);
        let w = p.var(&format!("enc.{}.w", spec.name))?;
        let b = p.var(&format!("enc.{}.b", spec.name))?;
        let xw = tape.matmul(x, w)?;
        let proj = tape.add(xw, b)?;
        let slot = match spec.location {
            Location::Node => &mut node,
            Location::Edge => &mut edge,
            Location::Graph => &mut graph,
        };
        *slot = Some(match *slot {
            None => proj,
            Some(acc) => tape.add(acc, proj)?,
        });
    }

    let mut u = match node {
        Some(u) => u,
        None => tape.constant(Tensor::zeros(vec![n, d])),
    };
    if let Some(g) = graph {
        let g = tape.reshape(g, vec![d])?;
        u = tape.add(u, g)?;
    }
    if view.n_total > n {
        let pad = tape.constant(Tensor::zeros(vec![view.n_total - n, d]));
        u = tape.concat(&[u, pad], 0)?;
    }

    let mut e = match edge {
        Some(e) => e,
        None => tape.constant(Tensor::zeros(vec![m, d])),
    };
    if view.num_edges() > m {
        let pad = tape.constant(Tensor::zeros(vec![view.num_edges() - m, d]));
        e = tape.concat(&[e, pad], 0)?;
    }
    if p.config.cgp {
        let table = p.var("enc.edge_type")?;
        let typed = tape.gather(table, view.type_ids())?;
        e = tape.add(e, typed)?;
    }
    Ok(Encoded { u, e })
}
