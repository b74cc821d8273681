//! Finite-difference checks of every tape operation and of the module
//! losses, run at random points.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compiler::{generate_computation_graph, Lexicon};
use crate::grounding::{forward, GroundNet, ModelConfig, SceneTensors, Vocabulary};
use crate::scene::{BoundingBox, Scene, Split};
use crate::tensor::{grad_check, stream_rng, Result, Tape, Tensor, TensorError, Var};
use crate::treebank::read_ptb;

/// Gradient tolerance the checks are judged against.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub points: usize,
    /// Worst error over all points and coordinates.
    pub max_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

type Op = fn(&mut Tape, Var) -> Result<Var>;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn piece(t: &mut Tape, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
    let len = shape.iter().product();
    let s = t.slice(x, start, len)?;
    t.reshape(s, shape)
}

/// Reduces to a scalar with fixed, uneven weights so every output entry
/// reaches the gradient.
fn weigh(t: &mut Tape, y: Var) -> Result<Var> {
    let n = t.value(y).len();
    let shape = t.value(y).shape().to_vec();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.7 * ((i * 7919) % 13) as f64 / 13.0).collect())?;
    let w = t.constant(w);
    let prod = t.mul(y, w)?;
    t.sum(prod)
}

/// `(name, input length, positive inputs, op)`.
fn ops() -> Vec<(&'static str, usize, bool, Op)> {
    vec![
        ("matmul", 6 + 12, false, |t, x| {
            let a = piece(t, x, 0, &[2, 3])?;
            let b = piece(t, x, 6, &[3, 4])?;
            t.matmul(a, b)
        }),
        ("matmul_vec", 12 + 4, false, |t, x| {
            let a = piece(t, x, 0, &[3, 4])?;
            let v = piece(t, x, 12, &[4])?;
            let left = t.matmul(a, v)?;
            let w = piece(t, x, 0, &[3])?;
            let right = t.matmul(w, a)?;
            t.concat(&[left, right])
        }),
        ("add", 8, false, |t, x| {
            let a = piece(t, x, 0, &[4])?;
            let b = piece(t, x, 4, &[4])?;
            t.add(a, b)
        }),
        ("elementwise_mul", 8, false, |t, x| {
            let a = piece(t, x, 0, &[4])?;
            let b = piece(t, x, 4, &[4])?;
            t.mul(a, b)
        }),
        ("mul_rows", 6 + 3, false, |t, x| {
            let a = piece(t, x, 0, &[2, 3])?;
            let v = piece(t, x, 6, &[3])?;
            t.mul_rows(a, v)
        }),
        ("concat", 6, false, |t, x| {
            let a = piece(t, x, 0, &[2])?;
            let b = piece(t, x, 2, &[4])?;
            t.concat(&[b, a])
        }),
        ("stack", 6, false, |t, x| {
            let a = piece(t, x, 0, &[3])?;
            let b = piece(t, x, 3, &[3])?;
            t.stack(&[b, a, b])
        }),
        ("softmax", 5, false, |t, x| t.softmax(x)),
        ("softmax_rows", 6, false, |t, x| {
            let m = t.reshape(x, &[2, 3])?;
            t.softmax(m)
        }),
        ("l2_normalize", 6, false, |t, x| {
            let m = t.reshape(x, &[2, 3])?;
            t.l2_normalize(m)
        }),
        ("sigmoid", 5, false, |t, x| t.sigmoid(x)),
        ("tanh", 5, false, |t, x| t.tanh(x)),
        ("ln", 5, true, |t, x| t.ln(x)),
        ("scale", 4, false, |t, x| t.scale(x, -2.5)),
        ("embedding_lookup", 15, false, |t, x| {
            let table = t.reshape(x, &[5, 3])?;
            t.embedding(table, &[4, 0, 2, 2])
        }),
        ("sum", 4, false, |t, x| {
            let s = t.sum(x)?;
            t.mul(s, s)
        }),
        ("renormalize", 5, true, |t, x| t.renormalize(x)),
        ("transpose", 6, false, |t, x| {
            let m = t.reshape(x, &[2, 3])?;
            t.transpose(m)
        }),
        ("reshape", 6, false, |t, x| t.reshape(x, &[3, 2])),
        ("slice", 6, false, |t, x| t.slice(x, 1, 3)),
        ("row", 6, false, |t, x| {
            let m = t.reshape(x, &[3, 2])?;
            t.row(m, 1)
        }),
        ("select", 4, false, |t, x| t.select(x, 2)),
    ]
}

/// Every tape operation at `points` random inputs.
pub fn op_checks(seed: u64, points: usize) -> Result<Vec<CheckResult>> {
    ops()
        .into_iter()
        .enumerate()
        .map(|(k, (name, len, positive, op))| {
            let mut rng = stream_rng(seed, k as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let (lo, hi) = if positive { (0.2, 2.0) } else { (-1.5, 1.5) };
                let point = uniform(&mut rng, len, lo, hi);
                let err = grad_check(
                    |t, x| {
                        let y = op(t, x)?;
                        weigh(t, y)
                    },
                    &point,
                )?;
                worst = worst.max(err);
            }
            Ok(CheckResult { name: name.to_string(), points, max_error: worst })
        })
        .collect()
}

const VOCAB: &str = "red blue green ball cube cone left right above nearest big";

fn random_scene(rng: &mut ChaCha8Rng, n: usize, vis_dim: usize) -> Scene {
    let boxes = (0..n)
        .map(|i| {
            let xmin = rng.gen_range(0.0..80.0);
            let ymin = rng.gen_range(0.0..80.0);
            BoundingBox {
                id: i as u32 + 1,
                xmin,
                ymin,
                xmax: xmin + rng.gen_range(3.0..20.0),
                ymax: ymin + rng.gen_range(3.0..20.0),
                features: (0..vis_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    Scene {
        id: 0,
        split: Split::Test,
        width: 100.0,
        height: 100.0,
        expression: Vec::new(),
        parse: String::new(),
        boxes,
        target: 1,
        supporting: BTreeSet::new(),
    }
}

fn tiny_model(seed: u64) -> GroundNet {
    let config = ModelConfig { hidden: 3, embed: 4, vis_dim: 3, ..ModelConfig::default() };
    GroundNet::new(config, Vocabulary::from_words(VOCAB.split_whitespace()), seed)
}

fn to_tensor_error(e: impl std::fmt::Display) -> TensorError {
    TensorError::Callback(e.to_string())
}

/// Negative log-likelihood of one box under `Locate`, under `Relate`
/// applied to a fixed grounding, and under a whole compiled graph, each
/// differentiated with respect to every model parameter.
pub fn loss_checks(seed: u64, points: usize) -> Result<Vec<CheckResult>> {
    let nested = read_ptb(
        "(NP (NP (JJ red) (NN ball)) (PP (JJ left) (IN of) (NP (NP (JJ big) (JJ blue) (NN cube)) \
         (PP (JJS nearest) (NP (NN cone))))))",
    )
    .map_err(to_tensor_error)?;
    let graph = generate_computation_graph(&nested, &Lexicon::default()).map_err(to_tensor_error)?;
    let phrase = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
    let (locate_words, relate_words) = (phrase("big blue cube"), phrase("left above"));

    let mut results = Vec::new();
    for (k, name) in ["locate_loss", "relate_loss", "graph_loss"].into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for p in 0..points {
            let mut rng = stream_rng(seed, 1000 + (k * points + p) as u64);
            let model = tiny_model(rng.gen());
            let n = rng.gen_range(3..6);
            let scene = random_scene(&mut rng, n, 3);
            let inputs = SceneTensors::new(&scene, 3).map_err(to_tensor_error)?;
            let input_dist: Vec<f64> = {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            };
            let target = rng.gen_range(0..n);
            let err = grad_check(
                |tape, flat| {
                    let params = model.bind_flat(tape, flat)?;
                    let out = match k {
                        0 => {
                            let ids = forward::phrase_ids(&model, &locate_words).map_err(to_tensor_error)?;
                            let text = forward::attend(tape, &params, 3, &ids).map_err(to_tensor_error)?;
                            let boxes = tape.constant(inputs.boxes.clone());
                            forward::locate(tape, &params, text, boxes).map_err(to_tensor_error)?
                        }
                        1 => {
                            let ids = forward::phrase_ids(&model, &relate_words).map_err(to_tensor_error)?;
                            let text = forward::attend(tape, &params, 3, &ids).map_err(to_tensor_error)?;
                            let pairs = tape.constant(inputs.pairs.clone());
                            let dist = tape.constant(Tensor::vector(input_dist.clone()));
                            forward::relate(tape, &params, model.config.relate_norm, text, pairs, n, dist)
                                .map_err(to_tensor_error)?
                        }
                        _ => {
                            let outs = forward::execute(tape, &params, &model, &graph, &inputs)
                                .map_err(to_tensor_error)?;
                            outs[graph.root]
                        }
                    };
                    forward::nll(tape, out, target).map_err(to_tensor_error)
                },
                &model.flatten(),
            )?;
            worst = worst.max(err);
        }
        results.push(CheckResult { name: name.to_string(), points, max_error: worst });
    }
    Ok(results)
}

/// All operation and loss checks.
pub fn gradient_self_check(seed: u64, points: usize) -> Result<Vec<CheckResult>> {
    let mut out = op_checks(seed, points)?;
    out.extend(loss_checks(seed, points)?);
    Ok(out)
}
