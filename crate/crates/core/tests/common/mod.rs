#![allow(dead_code)]

use std::collections::BTreeSet;

use dear::autodiff::Tensor;
use dear::dear::EquilibriumConfig;
use dear::expander::Mat2;
use dear::fixpoint::SolveConfig;
use dear::model::{ModelConfig, ModelParams};
use dear::tasks::{make_dataset, Algorithm, DType, DatasetSpec, GraphInstance, Location, Split, P_GRID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn dataset(alg: Algorithm, count: usize, sizes: std::ops::RangeInclusive<usize>, seed: u64) -> Vec<GraphInstance> {
    let spec = DatasetSpec {
        algorithm: alg,
        split: Split::Train,
        count,
        sizes,
        p_grid: P_GRID.to_vec(),
        seed,
    };
    make_dataset(&spec).unwrap().instances
}

pub fn instance(alg: Algorithm, n: usize, seed: u64) -> GraphInstance {
    dataset(alg, 1, n..=n, seed).remove(0)
}

pub fn flat(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.to_vec()).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

/// Relabels node `i` as `perm[i]`, keeping the edge order.
pub fn permute_instance(inst: &GraphInstance, perm: &[usize]) -> GraphInstance {
    let n = inst.n;
    assert_eq!(perm.len(), n);
    let mut out = inst.clone();
    out.edges = inst.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
    for f in out.features.values_mut() {
        let is_pointer = matches!(f.dtype, DType::Pointer | DType::PermutationPointer);
        if f.location != Location::Node {
            continue;
        }
        let w = f.values.len() / n;
        let mut values = vec![0.0; f.values.len()];
        for i in 0..n {
            for k in 0..w {
                let v = f.values[i * w + k];
                values[perm[i] * w + k] = if is_pointer { perm[v as usize] as f64 } else { v };
            }
        }
        f.values = values;
    }
    out
}

/// Naive dense solve of `a x = b` by Gaussian elimination with partial
/// pivoting; `a` is row-major `n x n`.
pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

pub type ScalarFn = Box<dyn Fn(&mut dear::autodiff::Tape, dear::autodiff::Var) -> dear::Result<dear::autodiff::Var>>;

/// Values in ±[0.2, 1.5], kept away from the kinks of relu and max.
pub fn away_from_kinks(rng: &mut impl rand::Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// One scalar-valued probe per primitive: `sum(op(x) ∘ w)` for a fixed
/// random `w`, so no gradient vanishes by symmetry.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Tensor, ScalarFn)> {
    use dear::autodiff::Tape;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: Vec<usize>| {
        let len = shape.iter().product();
        Tensor::new(shape, away_from_kinks(&mut rng, len)).unwrap()
    };
    let x23 = t(vec![2, 3]);
    let x34 = t(vec![3, 4]);
    let x4 = t(vec![4]);
    let x5 = t(vec![5, 2]);
    let w23 = t(vec![2, 3]);
    let w24 = t(vec![2, 4]);
    let w22 = t(vec![2, 2]);
    let w32 = t(vec![3, 2]);
    let w2 = t(vec![2]);
    // Distinct magnitudes per segment so the max is unambiguous.
    let seg = Tensor::new(vec![5, 2], vec![0.3, -0.9, 1.2, 0.4, -0.6, 1.4, 0.8, -0.2, 0.1, 0.7]).unwrap();

    fn weighted(tape: &mut Tape, y: dear::autodiff::Var, w: &Tensor) -> dear::Result<dear::autodiff::Var> {
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv)?;
        tape.sum(p)
    }

    let mut cases: Vec<(&'static str, Tensor, ScalarFn)> = Vec::new();
    let w = w24.clone();
    let b = x34.clone();
    cases.push(("matmul", x23.clone(), Box::new(move |tp, x| {
        let bv = tp.constant(b.clone());
        let y = tp.matmul(x, bv)?;
        weighted(tp, y, &w)
    })));
    let w = w23.clone();
    let c = w32.clone();
    cases.push(("matmul_rhs", x34.clone(), Box::new(move |tp, x| {
        let a = tp.constant(Tensor::new(vec![2, 3], c.to_vec()).unwrap());
        let y = tp.matmul(a, x)?;
        weighted(tp, y, &Tensor::new(vec![2, 4], w.to_vec().into_iter().chain([0.5, -0.25]).collect::<Vec<_>>()).unwrap())
    })));
    for name in ["add", "sub", "mul"] {
        let other = w23.clone();
        let w = x23.map(|v| v * 0.7 + 0.1);
        cases.push((name, x23.clone(), Box::new(move |tp, x| {
            let o = tp.constant(other.clone());
            let y = match name {
                "add" => tp.add(x, o)?,
                "sub" => tp.sub(o, x)?,
                _ => tp.mul(x, o)?,
            };
            let y2 = tp.mul(y, y)?;
            weighted(tp, y2, &w)
        })));
    }
    let w = w23.clone();
    cases.push(("add_row_broadcast", Tensor::new(vec![3], vec![0.3, -0.4, 0.9]).unwrap(), Box::new(move |tp, x| {
        let a = tp.constant(w.clone());
        let y = tp.add(a, x)?;
        let y2 = tp.mul(y, y)?;
        tp.sum(y2)
    })));
    let unary: [(&'static str, fn(&mut Tape, dear::autodiff::Var) -> dear::Result<dear::autodiff::Var>); 10] = [
        ("relu", |tp, x| tp.relu(x)),
        ("leaky_relu_offset", |tp, x| {
            let s = tp.scale(x, 8.0)?;
            tp.leaky_relu_offset(s, -6.0, 0.01)
        }),
        ("sigmoid", |tp, x| tp.sigmoid(x)),
        ("tanh", |tp, x| tp.tanh(x)),
        ("softplus", |tp, x| tp.softplus(x)),
        ("softmax_rows", |tp, x| tp.softmax_rows(x)),
        ("log_softmax_rows", |tp, x| tp.log_softmax_rows(x)),
        ("layer_norm", |tp, x| tp.layer_norm(x, 1e-5)),
        ("transpose", |tp, x| {
            let y = tp.transpose(x)?;
            tp.transpose(y)
        }),
        ("scale", |tp, x| tp.scale(x, -2.5)),
    ];
    for (name, f) in unary {
        let w = w23.clone();
        cases.push((name, x23.clone(), Box::new(move |tp, x| {
            let y = f(tp, x)?;
            weighted(tp, y, &w)
        })));
    }
    let w = w2.clone();
    cases.push(("logsumexp", x23.clone(), Box::new(move |tp, x| {
        let y = tp.logsumexp_rows(x)?;
        weighted(tp, y, &w)
    })));
    let w = Tensor::new(vec![2, 7], (0..14).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
    let other = w24.clone();
    cases.push(("concat", x23.clone(), Box::new(move |tp, x| {
        let o = tp.constant(other.clone());
        let y = tp.concat(&[x, o], 1)?;
        weighted(tp, y, &w)
    })));
    let w = Tensor::new(vec![4, 2], vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5, 1.0, -0.5]).unwrap();
    cases.push(("gather", x5.clone(), Box::new(move |tp, x| {
        let y = tp.gather(x, vec![4, 0, 4, 2])?;
        weighted(tp, y, &w)
    })));
    let w = w22.clone();
    cases.push(("segment_sum", x5.clone(), Box::new(move |tp, x| {
        let y = tp.segment_sum(x, vec![1, 0, 1, 1, 0], 2)?;
        let y2 = tp.mul(y, y)?;
        weighted(tp, y2, &w)
    })));
    let w = w22.clone();
    cases.push(("segment_max", seg, Box::new(move |tp, x| {
        let y = tp.segment_max(x, vec![1, 0, 1, 1, 0], 2)?;
        weighted(tp, y, &w)
    })));
    cases.push(("mean", x4.clone(), Box::new(|tp, x| {
        let y = tp.mul(x, x)?;
        tp.mean(y)
    })));
    cases.push(("sum", x4.clone(), Box::new(|tp, x| {
        let y = tp.tanh(x)?;
        tp.sum(y)
    })));
    cases.push(("l2_norm", x23.clone(), Box::new(|tp, x| tp.l2_norm(x))));
    let w = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
    cases.push(("reshape", x23, Box::new(move |tp, x| {
        let y = tp.reshape(x, vec![3, 2])?;
        weighted(tp, y, &w)
    })));
    cases
}

pub struct ParamCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub diff: f64,
}

impl ParamCheck {
    /// Relative error, or 0 when both gradients vanish to roundoff (a
    /// parameter the loss is invariant to, like a bias under a softmax).
    pub fn error(&self) -> f64 {
        let scale = self.analytic.max(self.numeric);
        if scale < 1e-8 {
            0.0
        } else {
            self.diff / scale
        }
    }
}

/// Finite-difference check of the full forward pass (encode, `steps`
/// processor applications from zero, decode, task loss) with respect to
/// every parameter tensor.
pub fn model_grad_errors(
    params: &dear::model::ModelParams,
    inst: &GraphInstance,
    steps: usize,
    eps: f64,
) -> Vec<ParamCheck> {
    use dear::autodiff::{Tape, Var};
    use dear::model::{decode, encode, prepare, random_features, step, task_loss, GraphView};
    let cfg = &params.config;
    let view = GraphView::new(inst, cfg).unwrap();
    let d = cfg.latent_dim;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let random = random_features(cfg.norm, view.n_total, cfg.granola_random_dim, &mut rng);
    params
        .names()
        .iter()
        .map(|name| {
            let f = |tape: &mut Tape, probe: Var| -> dear::Result<Var> {
                let mut bound = params.bind(tape, false);
                bound.replace(name, probe)?;
                let enc = encode(tape, &bound, &view, inst)?;
                let st = prepare(tape, &bound, &view, enc, random.as_ref())?;
                let mut h = tape.constant(Tensor::zeros(vec![view.n_total, d]));
                for _ in 0..steps {
                    h = step(tape, &bound, &view, &st, h)?;
                }
                let preds = decode(tape, &bound, &view, inst, h, enc)?;
                task_loss(tape, &preds, inst)
            };
            let x = params.get(name).unwrap();
            let mut tape = Tape::new();
            let v = tape.var(x.clone());
            let out = f(&mut tape, v).unwrap();
            let analytic = tape.backward(out).unwrap().get_or_zeros(v, x).to_vec();
            let value_at = |data: Vec<f64>| {
                let mut tape = Tape::new();
                let v = tape.constant(Tensor::new(x.shape().to_vec(), data).unwrap());
                let out = f(&mut tape, v).unwrap();
                tape.value(out).item().unwrap()
            };
            let mut numeric = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let mut plus = x.to_vec();
                let mut minus = x.to_vec();
                plus[i] += eps;
                minus[i] -= eps;
                numeric.push((value_at(plus) - value_at(minus)) / (2.0 * eps));
            }
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            ParamCheck {
                name: name.clone(),
                analytic: norm(&analytic),
                numeric: norm(&numeric),
                diff: norm(&diff),
            }
        })
        .collect()
}

/// Random `A` with Frobenius norm `contraction` (so spectral norm below it)
/// and random `b`.
pub fn random_contraction(dim: usize, contraction: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
    let f = norm(&a);
    a.iter_mut().for_each(|x| *x *= contraction / f);
    let b = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    (a, b)
}

pub fn affine(a: &[f64], b: &[f64], z: &[f64]) -> Vec<f64> {
    let n = b.len();
    (0..n)
        .map(|i| b[i] + (0..n).map(|j| a[i * n + j] * z[j]).sum::<f64>())
        .collect()
}

/// `(I − A)⁻¹ b` by elimination.
pub fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let m: Vec<f64> = (0..n * n)
        .map(|k| if k / n == k % n { 1.0 } else { 0.0 } - a[k])
        .collect();
    dense_solve(&m, b)
}

pub fn tiny_config() -> ModelConfig {
    // Gate bias 0 keeps 100 unrolled steps well inside the converged regime.
    ModelConfig {
        latent_dim: 4,
        gate_bias_init: 0.0,
        ..ModelConfig::default()
    }
}

pub fn tight() -> EquilibriumConfig {
    EquilibriumConfig {
        solver: SolveConfig::anderson(1e-10, 500),
        extra_step_prob: 0.0,
        ..EquilibriumConfig::default()
    }
}

/// Tiny model whose processor is a contraction in the state: state-facing
/// weights are shrunk, and small noise on every parameter keeps relu and max
/// arguments away from exact ties (zero biases tie often at d = 4, and the
/// equilibrium loss then has a kink where no gradient exists).
pub fn contractive(cfg: &ModelConfig, alg: Algorithm, seed: u64, shrink: f64) -> ModelParams {
    let p = ModelParams::init(cfg, alg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let tensors = p
        .iter()
        .map(|(name, t)| {
            let state_facing = name.starts_with("proc.")
                && [".w_h", ".w_agg", ".w_src", ".w_dst"].iter().any(|s| name.ends_with(s));
            let k = if state_facing { shrink } else { 1.0 };
            let data: Vec<f64> = t
                .data()
                .iter()
                .map(|v| k * v + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            Tensor::new(t.shape().to_vec(), data).unwrap()
        })
        .collect();
    p.with_tensors(tensors)
}

pub fn brute_force_alignment(d: &[Vec<f64>]) -> f64 {
    let (t, t_g) = (d.len(), d[0].len());
    let shared = t > t_g;
    let mut best = f64::INFINITY;
    let mut cols = vec![0usize; t];
    fn rec(i: usize, lo: usize, d: &[Vec<f64>], shared: bool, cols: &mut [usize], best: &mut f64) {
        if i == cols.len() {
            let cost: f64 = cols.iter().enumerate().map(|(r, &c)| d[r][c]).sum();
            *best = best.min(cost);
            return;
        }
        for c in lo..d[0].len() {
            cols[i] = c;
            rec(i + 1, if shared { c } else { c + 1 }, d, shared, cols, best);
        }
    }
    rec(0, 0, d, shared, &mut cols, &mut best);
    best
}

/// Weight of the cheapest spanning tree by trying every (n−1)-subset of
/// edges; `None` if the graph is disconnected.
pub fn exhaustive_mst(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] == x { x } else { let r = find(p, p[x]); p[x] = r; r }
    }
    let m = edges.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n - 1).collect();
    if m < n - 1 {
        return None;
    }
    loop {
        let mut parent: Vec<usize> = (0..n).collect();
        let mut acyclic = true;
        let mut total = 0.0;
        for &i in &pick {
            let (a, b, w) = edges[i];
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                acyclic = false;
                break;
            }
            parent[ra] = rb;
            total += w;
        }
        if acyclic && best.is_none_or(|b| total < b) {
            best = Some(total);
        }
        // Next combination in lexicographic order.
        let k = pick.len();
        let Some(i) = (0..k).rev().find(|&i| pick[i] < m - k + i) else {
            return best;
        };
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// Every matrix over Z_n with determinant 1, by enumeration.
pub fn brute_force_sl2(n: u32) -> BTreeSet<Mat2> {
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if (a * d + n * n - b * c) % n == 1 % n {
                        out.insert([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// Zero-initialised biases make many max and relu arguments tie exactly, which
/// is a kink; small noise moves the check to a generic point.
pub fn generic_point(params: &ModelParams, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = params
        .tensors()
        .iter()
        .map(|t| {
            let data: Vec<f64> = t
                .data()
                .iter()
                .map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(t.shape().to_vec(), data).unwrap()
        })
        .collect();
    params.with_tensors(tensors)
}
