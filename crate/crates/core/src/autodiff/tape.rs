use std::sync::Arc;

use super::ops::{self, Aux, Prim};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Option<(Prim, Vec<usize>)>,
    aux: Aux,
    requires_grad: bool,
}

/// Linear record of primitive applications for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children. A tape is owned by one forward pass; open a new one (or
/// [`truncate`](Tape::truncate) back to a mark) for the next.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Cotangents produced by a reverse pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `mark`. Vars at or beyond `mark`
    /// become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    fn push(&mut self, value: Tensor, op: Option<(Prim, Vec<usize>)>, aux: Aux, rg: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            aux,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, None, None, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, None, None, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, None, None, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Applies `prim` and records it.
    pub fn apply(&mut self, prim: Prim, args: &[Var]) -> Result<Var> {
        let (value, aux) = {
            let vals: Vec<&Tensor> = args.iter().map(|a| &self.nodes[a.0].value).collect();
            ops::forward(&prim, &vals)?
        };
        let rg = args.iter().any(|a| self.nodes[a.0].requires_grad);
        let parents = args.iter().map(|a| a.0).collect();
        Ok(self.push(value, Some((prim, parents)), aux, rg))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let v = self.value(loss);
        if v.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        let seed = Tensor::full(v.shape().to_vec(), 1.0);
        self.backward_from(&[(loss, seed)])
    }

    /// Reverse pass seeded with explicit cotangents; contributions from all
    /// seeds are summed.
    pub fn backward_from(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::ShapeMismatch {
                    op: "backward seed",
                    lhs: self.value(*v).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            accumulate(&mut grads[v.0], g.clone())?;
            top = top.max(v.0 + 1);
        }
        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some((prim, parents)) = &node.op else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let args: Vec<&Tensor> = parents.iter().map(|&p| &self.nodes[p].value).collect();
            let contribs = ops::backward(prim, &args, &node.value, &node.aux, &g)?;
            for (&p, c) in parents.iter().zip(contribs) {
                if self.nodes[p].requires_grad {
                    accumulate(&mut grads[p], c)?;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Prim::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Prim::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Prim::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Prim::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Prim::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Relu, &[a])
    }

    pub fn leaky_relu_offset(&mut self, a: Var, knee: f64, slope: f64) -> Result<Var> {
        self.apply(Prim::LeakyReluOffset { knee, slope }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Tanh, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Softplus, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::SoftmaxRows, &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::LogSoftmaxRows, &[a])
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::LogSumExpRows, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Prim::Concat { axis }, parts)
    }

    pub fn gather(&mut self, a: Var, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        self.apply(
            Prim::Gather {
                indices: indices.into(),
            },
            &[a],
        )
    }

    pub fn segment_sum(
        &mut self,
        a: Var,
        segments: impl Into<Arc<[usize]>>,
        num_segments: usize,
    ) -> Result<Var> {
        self.apply(
            Prim::SegmentSum {
                segments: segments.into(),
                num_segments,
            },
            &[a],
        )
    }

    pub fn segment_max(
        &mut self,
        a: Var,
        segments: impl Into<Arc<[usize]>>,
        num_segments: usize,
    ) -> Result<Var> {
        self.apply(
            Prim::SegmentMax {
                segments: segments.into(),
                num_segments,
            },
            &[a],
        )
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.apply(Prim::LayerNorm { eps }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Mean, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Sum, &[a])
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::L2Norm, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Prim::Transpose, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.apply(
            Prim::Reshape {
                shape: shape.into(),
            },
            &[a],
        )
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.zip_map(&g, |a, b| a + b)?,
    });
    Ok(())
}
