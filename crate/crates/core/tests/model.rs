mod common;

use std::collections::HashMap;
use std::path::PathBuf;

use dear::autodiff::{Tape, Tensor};
use dear::dear::Session;
use dear::model::{
    output_scores, predicted_values, sinkhorn_log, task_loss, CgpSchedule, GraphView, ModelConfig,
    ModelParams, NormKind, ProcessorKind,
};
use dear::tasks::{Algorithm, GraphInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn config(d: usize) -> ModelConfig {
    ModelConfig {
        latent_dim: d,
        gate_bias_init: 0.0,
        ..ModelConfig::default()
    }
}

fn random_state(shape: [usize; 2], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..shape[0] * shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `steps` processor applications from zero; returns the final state.
fn run_steps(params: &ModelParams, inst: &GraphInstance, steps: usize) -> Tensor {
    let view = GraphView::new(inst, &params.config).unwrap();
    let mut s = Session::open(params, &view, inst, None, false).unwrap();
    let mut h = Tensor::zeros(s.latent_shape().to_vec());
    for _ in 0..steps {
        h = s.apply(&h).unwrap();
    }
    h
}

#[test]
fn processor_is_permutation_equivariant() {
    let cases = [
        (Algorithm::BellmanFord, ProcessorKind::Pgn),
        (Algorithm::Bfs, ProcessorKind::Triplet),
        (Algorithm::InsertionSort, ProcessorKind::Pgn),
        (Algorithm::DagShortestPaths, ProcessorKind::Pgn),
    ];
    for (k, (alg, processor)) in cases.into_iter().enumerate() {
        let cfg = ModelConfig { processor, ..config(8) };
        let params = ModelParams::init(&cfg, alg, k as u64).unwrap();
        let inst = common::instance(alg, 7, 20 + k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut perm: Vec<usize> = (0..inst.n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let permuted = common::permute_instance(&inst, &perm);
        permuted.validate().unwrap();

        let h = run_steps(&params, &inst, 4);
        let hp = run_steps(&params, &permuted, 4);
        for i in 0..inst.n {
            assert_eq!(h.row(i), hp.row(perm[i]), "{alg:?} node {i}");
        }
    }
}

#[test]
fn decoded_pointers_are_permutation_equivariant() {
    for (k, alg) in [Algorithm::BellmanFord, Algorithm::InsertionSort, Algorithm::Minimum].into_iter().enumerate() {
        let params = ModelParams::init(&config(8), alg, 40 + k as u64).unwrap();
        let inst = common::instance(alg, 6, 40 + k as u64);
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted = common::permute_instance(&inst, &perm);
        let decoded = |inst: &GraphInstance| {
            let view = GraphView::new(inst, &params.config).unwrap();
            let mut s = Session::open(&params, &view, inst, None, false).unwrap();
            let mut h = s.tape.constant(Tensor::zeros(s.latent_shape().to_vec()));
            for _ in 0..3 {
                h = s.step(h).unwrap();
            }
            let preds = s.decode(inst, h).unwrap();
            let p = &preds.items[0];
            (s.tape.value(p.var).clone(), predicted_values(&s.tape, p))
        };
        let (lp, hard) = decoded(&inst);
        let (lp2, hard2) = decoded(&permuted);
        let n = inst.n;
        if lp.rows() == n && lp.row_len() == n {
            for i in 0..n {
                for j in 0..n {
                    assert!((lp.at2(i, j) - lp2.at2(perm[i], perm[j])).abs() < 1e-12);
                }
            }
        }
        for i in 0..n {
            let expect = match alg {
                Algorithm::Minimum => hard[i],
                _ => perm[hard[i] as usize] as f64,
            };
            assert_eq!(hard2[perm[i]], expect, "{alg:?} node {i}");
        }
    }
}

#[test]
fn closed_gate_keeps_the_state() {
    for processor in [ProcessorKind::Pgn, ProcessorKind::Triplet] {
        let cfg = ModelConfig { processor, gate_bias_init: -30.0, ..config(6) };
        let params = ModelParams::init(&cfg, Algorithm::BellmanFord, 4).unwrap();
        let inst = common::instance(Algorithm::BellmanFord, 6, 4);
        let view = GraphView::new(&inst, &cfg).unwrap();
        let mut s = Session::open(&params, &view, &inst, None, false).unwrap();
        let h = random_state(s.latent_shape(), 9);
        let next = s.apply(&h).unwrap();
        assert!(next.max_abs_diff(&h) < 1e-9, "{:e}", next.max_abs_diff(&h));
        assert!(run_steps(&params, &inst, 5).norm() < 1e-9);
    }
}

#[test]
fn triplet_with_zero_output_matches_pgn() {
    let alg = Algorithm::BellmanFord;
    let tri_cfg = ModelConfig { processor: ProcessorKind::Triplet, ..config(6) };
    let mut tri = ModelParams::init(&tri_cfg, alg, 5).unwrap();
    tri.set("proc.tri.w_out", Tensor::zeros(vec![6, 6])).unwrap();
    let named: HashMap<String, Tensor> = tri.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let pgn = ModelParams::from_named(&config(6), alg, &named).unwrap();
    let inst = common::instance(alg, 6, 5);
    let a = run_steps(&tri, &inst, 3);
    let b = run_steps(&pgn, &inst, 3);
    assert!(a.max_abs_diff(&b) < 1e-12);
    assert!(a.norm() > 0.1);
}

#[test]
fn granola_with_zero_heads_matches_layer_norm() {
    let alg = Algorithm::Minimum;
    let gcfg = ModelConfig { norm: NormKind::GranolaLike, ..config(6) };
    let gran = ModelParams::init(&gcfg, alg, 6).unwrap();
    // Output weights of the conditioning MLP start at zero.
    assert_eq!(gran.get("norm.gran.w_gamma").unwrap().norm(), 0.0);
    let named: HashMap<String, Tensor> = gran.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let ln = ModelParams::from_named(&config(6), alg, &named).unwrap();
    let inst = common::instance(alg, 5, 6);
    let view = GraphView::new(&inst, &gcfg).unwrap();
    let random = random_state([view.n_total, gcfg.granola_random_dim], 1);
    let mut s = Session::open(&gran, &view, &inst, Some(&random), false).unwrap();
    let mut h = Tensor::zeros(s.latent_shape().to_vec());
    for _ in 0..3 {
        h = s.apply(&h).unwrap();
    }
    assert!(h.max_abs_diff(&run_steps(&ln, &inst, 3)) < 1e-12);
}

#[test]
fn virtual_nodes_do_not_reach_the_decoder() {
    for schedule in [CgpSchedule::Sequential, CgpSchedule::Joint] {
        let cfg = ModelConfig { cgp: true, cgp_schedule: schedule, ..config(6) };
        let alg = Algorithm::Bfs;
        let params = ModelParams::init(&cfg, alg, 7).unwrap();
        let inst = common::instance(alg, 5, 7);
        let view = GraphView::new(&inst, &cfg).unwrap();
        assert_eq!(view.n_total, 6);
        let mut s = Session::open(&params, &view, &inst, None, false).unwrap();
        let h = random_state(s.latent_shape(), 2);
        let mut h2 = h.to_vec();
        for x in &mut h2[5 * 6..] {
            *x += 3.0;
        }
        let h2 = Tensor::new(vec![6, 6], h2).unwrap();
        let decode_values = |s: &mut Session, h: &Tensor| {
            let hv = s.tape.constant(h.clone());
            let preds = s.decode(&inst, hv).unwrap();
            let v = s.tape.value(preds.items[0].var).clone();
            let loss = task_loss(&mut s.tape, &preds, &inst).unwrap();
            (v, s.tape.value(loss).item().unwrap())
        };
        let (a, la) = decode_values(&mut s, &h);
        let (b, lb) = decode_values(&mut s, &h2);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        // Virtual rows do influence base rows through the Cayley edges.
        let stepped = s.apply(&h).unwrap();
        let stepped2 = s.apply(&h2).unwrap();
        assert!(stepped.row(0) != stepped2.row(0) || stepped.row(1) != stepped2.row(1));
    }
}

#[test]
fn huge_inputs_stay_finite() {
    for alg in [Algorithm::Minimum, Algorithm::BellmanFord, Algorithm::InsertionSort] {
        let params = ModelParams::init(&config(8), alg, 8).unwrap();
        let mut inst = common::instance(alg, 6, 8);
        for name in ["key", "weight"] {
            if let Some(f) = inst.features.get_mut(name) {
                f.values.iter_mut().for_each(|v| *v *= 1e6);
            }
        }
        let view = GraphView::new(&inst, &params.config).unwrap();
        let mut s = Session::open(&params, &view, &inst, None, false).unwrap();
        let mut h = s.tape.constant(Tensor::zeros(s.latent_shape().to_vec()));
        for _ in 0..10 {
            h = s.step(h).unwrap();
        }
        assert!(s.tape.value(h).all_finite(), "{alg:?}");
        let preds = s.decode(&inst, h).unwrap();
        let loss = task_loss(&mut s.tape, &preds, &inst).unwrap();
        assert!(s.tape.value(loss).item().unwrap().is_finite());
    }
}

#[test]
fn full_model_passes_gradient_check() {
    let variants = [
        (Algorithm::BellmanFord, config(4)),
        (Algorithm::Minimum, ModelConfig { norm: NormKind::GranolaLike, granola_random_dim: 3, ..config(4) }),
        (Algorithm::InsertionSort, config(4)),
        (Algorithm::FloydWarshall, ModelConfig { processor: ProcessorKind::Triplet, ..config(4) }),
        (Algorithm::ParallelSearch, ModelConfig { cgp: true, ..config(4) }),
        (Algorithm::DagShortestPaths, ModelConfig { norm: NormKind::None, ..config(4) }),
    ];
    for (k, (alg, cfg)) in variants.into_iter().enumerate() {
        let params = common::generic_point(&ModelParams::init(&cfg, alg, 30 + k as u64).unwrap(), k as u64);
        let inst = common::instance(alg, 3, 30 + k as u64);
        for c in common::model_grad_errors(&params, &inst, 2, 1e-6) {
            assert!(c.error() < 1e-5, "{alg:?} `{}`: relative error {:e}", c.name, c.error());
        }
    }
}

#[test]
fn uniform_heads_give_log_k_loss() {
    // Minimum: zero decoder weights give a uniform softmax over n nodes.
    let alg = Algorithm::Minimum;
    let mut params = ModelParams::init(&config(4), alg, 9).unwrap();
    params.set("dec.min.w", Tensor::zeros(vec![8, 1])).unwrap();
    let inst = common::instance(alg, 7, 9);
    assert!((loss_after(&params, &inst, 2) - 7f64.ln()).abs() < 1e-12);

    // BFS pointer: uniform over the outgoing edges (self-loop included).
    let alg = Algorithm::Bfs;
    let mut params = ModelParams::init(&config(4), alg, 10).unwrap();
    params.set("dec.pi.w2", Tensor::zeros(vec![4, 1])).unwrap();
    let inst = common::instance(alg, 6, 10);
    let expect = (0..inst.n)
        .map(|v| (inst.edges.iter().filter(|e| e.0 == v).count() as f64).ln())
        .sum::<f64>()
        / inst.n as f64;
    assert!((loss_after(&params, &inst, 2) - expect).abs() < 1e-12);
}

fn loss_after(params: &ModelParams, inst: &GraphInstance, steps: usize) -> f64 {
    let view = GraphView::new(inst, &params.config).unwrap();
    let mut s = Session::open(params, &view, inst, None, false).unwrap();
    let mut h = s.tape.constant(Tensor::zeros(s.latent_shape().to_vec()));
    for _ in 0..steps {
        h = s.step(h).unwrap();
    }
    let preds = s.decode(inst, h).unwrap();
    let loss = task_loss(&mut s.tape, &preds, inst).unwrap();
    s.tape.value(loss).item().unwrap()
}

#[test]
fn sinkhorn_output_is_near_doubly_stochastic() {
    // Unit-scale logits at temperature 1; sharper inputs need more rounds.
    let temp = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 8;
        let mut tape = Tape::new();
        let logits: Vec<f64> = (0..n * n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let x = tape.constant(Tensor::new(vec![n, n], logits).unwrap());
        let p = sinkhorn_log(&mut tape, x, 10, temp, false).unwrap();
        let v = tape.value(p).map(f64::exp);
        for i in 0..n {
            let row: f64 = v.row(i).iter().sum();
            let col: f64 = (0..n).map(|r| v.at2(r, i)).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    assert!(worst < 1e-3, "largest marginal error {worst:e}");
}

#[derive(Serialize, Deserialize)]
struct Golden {
    u: Vec<f64>,
    e: Vec<f64>,
    loss: f64,
    state: Vec<f64>,
    predictions: Vec<(String, Vec<f64>)>,
}

fn golden_for(alg: Algorithm) -> Golden {
    let params = ModelParams::init(&config(8), alg, 123).unwrap();
    let inst = common::instance(alg, 5, 123);
    let view = GraphView::new(&inst, &params.config).unwrap();
    let mut s = Session::open(&params, &view, &inst, None, false).unwrap();
    let mut h = s.tape.constant(Tensor::zeros(s.latent_shape().to_vec()));
    for _ in 0..3 {
        h = s.step(h).unwrap();
    }
    let preds = s.decode(&inst, h).unwrap();
    let loss = task_loss(&mut s.tape, &preds, &inst).unwrap();
    assert_eq!(output_scores(&s.tape, &preds, &inst).unwrap().len(), preds.items.len());
    Golden {
        u: s.tape.value(s.enc.u).to_vec(),
        e: s.tape.value(s.enc.e).to_vec(),
        loss: s.tape.value(loss).item().unwrap(),
        state: s.tape.value(h).to_vec(),
        predictions: preds
            .items
            .iter()
            .map(|p| (p.spec.name.clone(), predicted_values(&s.tape, p)))
            .collect(),
    }
}

/// Fixed-seed forward passes pinned to files. Regenerate with `DEAR_BLESS=1`.
#[test]
fn forward_pass_matches_golden_files() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("DEAR_BLESS").is_some();
    for alg in [Algorithm::BellmanFord, Algorithm::InsertionSort, Algorithm::FloydWarshall] {
        let got = golden_for(alg);
        let path = dir.join(format!("{}.json", alg.name()));
        if bless {
            std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap()).unwrap();
            continue;
        }
        let want: Golden = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + y.abs()))
        };
        assert!(close(&got.u, &want.u), "{alg:?} U");
        assert!(close(&got.e, &want.e), "{alg:?} E");
        assert!(close(&got.state, &want.state), "{alg:?} state");
        assert!((got.loss - want.loss).abs() < 1e-9, "{alg:?} loss");
        assert_eq!(got.predictions, want.predictions, "{alg:?} predictions");
    }
}
