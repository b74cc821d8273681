//! Module equations recorded on a tape. Shared by inference, training and
//! gradient checks so every path runs the same arithmetic.

use crate::compiler::{ComputationGraph, NodeKind};
use crate::scene::Scene;
use crate::tensor::{Tape, Tensor, Var};

use super::params::{BoundCell, BoundParams, GroundNet, LocateText, RelateNorm, Vocabulary};
use super::GroundingError;

type Result<T> = std::result::Result<T, GroundingError>;

/// Smallest product mass `intersect` will renormalise.
pub const MIN_INTERSECT_MASS: f64 = 1e-12;

/// Per-scene constant inputs: box rows `[r_vis, r_spat]` and pair rows
/// `[r_i_spat, r_j_spat]` laid out at index `j * n + i`.
#[derive(Debug, Clone)]
pub struct SceneTensors {
    pub boxes: Tensor,
    pub pairs: Tensor,
    pub count: usize,
}

impl SceneTensors {
    pub fn new(scene: &Scene, vis_dim: usize) -> Result<Self> {
        let spatial = scene.spatial_table()?;
        let n = scene.boxes.len();
        let mut rows = Vec::with_capacity(n * (vis_dim + 5));
        for (b, s) in scene.boxes.iter().zip(&spatial) {
            if b.features.len() != vis_dim {
                return Err(GroundingError::FeatureLengthMismatch {
                    expected: vis_dim,
                    found: b.features.len(),
                });
            }
            rows.extend_from_slice(&b.features);
            rows.extend_from_slice(s);
        }
        let mut pairs = Vec::with_capacity(n * n * 10);
        for j in 0..n {
            for si in &spatial {
                pairs.extend_from_slice(si);
                pairs.extend_from_slice(&spatial[j]);
            }
        }
        Ok(SceneTensors {
            boxes: Tensor::matrix(n, vis_dim + 5, rows)?,
            pairs: Tensor::matrix(n * n, 10, pairs)?,
            count: n,
        })
    }
}

/// Word ids for a phrase; the empty phrase maps to the null token.
pub fn phrase_ids(model: &GroundNet, phrase: &[String]) -> Result<Vec<usize>> {
    if phrase.is_empty() {
        return if model.config.null_token {
            Ok(vec![Vocabulary::NULL_ID])
        } else {
            Err(GroundingError::EmptyPhrase)
        };
    }
    Ok(phrase.iter().map(|w| model.vocab.id(w)).collect())
}

fn lstm_step(tape: &mut Tape, cell: BoundCell, hidden: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let xh = tape.concat(&[x, h])?;
    let pre = tape.matmul(cell.weight, xh)?;
    let gates = tape.add(pre, cell.bias)?;
    let slice = |tape: &mut Tape, k: usize| tape.slice(gates, k * hidden, hidden);
    let i = slice(tape, 0)?;
    let i = tape.sigmoid(i)?;
    let f = slice(tape, 1)?;
    let f = tape.sigmoid(f)?;
    let g = slice(tape, 2)?;
    let g = tape.tanh(g)?;
    let o = slice(tape, 3)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Hidden states of one direction, returned in sequence order.
fn lstm_pass(tape: &mut Tape, cell: BoundCell, hidden: usize, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    let mut out = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse { (0..inputs.len()).rev().collect() } else { (0..inputs.len()).collect() };
    for t in order {
        (h, c) = lstm_step(tape, cell, hidden, inputs[t], h, c)?;
        out[t] = h;
    }
    Ok(out)
}

/// Attention weights over the phrase's words and the embedded words, with
/// the weights scored from the two-layer bidirectional states.
pub fn attention(tape: &mut Tape, params: &BoundParams, hidden: usize, ids: &[usize]) -> Result<(Var, Var)> {
    if ids.is_empty() {
        return Err(GroundingError::EmptyPhrase);
    }
    let embedded = tape.embedding(params.embedding, ids)?;
    if ids.len() == 1 {
        // A softmax over one word is exactly 1.
        let one = tape.constant(Tensor::vector(vec![1.0]));
        return Ok((one, embedded));
    }
    let words = (0..ids.len()).map(|t| tape.row(embedded, t)).collect::<std::result::Result<Vec<_>, _>>()?;
    let [l1f, l1b, l2f, l2b] = params.cells;
    let fw1 = lstm_pass(tape, l1f, hidden, &words, false)?;
    let bw1 = lstm_pass(tape, l1b, hidden, &words, true)?;
    let layer2_in = fw1
        .iter()
        .zip(&bw1)
        .map(|(f, b)| tape.concat(&[*f, *b]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let fw2 = lstm_pass(tape, l2f, hidden, &layer2_in, false)?;
    let bw2 = lstm_pass(tape, l2b, hidden, &layer2_in, true)?;
    let states = (0..ids.len())
        .map(|t| tape.concat(&[fw1[t], bw1[t], fw2[t], bw2[t]]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stacked = tape.stack(&states)?;
    let scorer = tape.reshape(params.attention, &[4 * hidden])?;
    let scores = tape.matmul(stacked, scorer)?;
    Ok((tape.softmax(scores)?, embedded))
}

/// Attention-weighted average of word embeddings (not of hidden states).
pub fn attend(tape: &mut Tape, params: &BoundParams, hidden: usize, ids: &[usize]) -> Result<Var> {
    if ids.len() == 1 {
        let embedded = tape.embedding(params.embedding, ids)?;
        return Ok(tape.row(embedded, 0)?);
    }
    let (weights, embedded) = attention(tape, params, hidden, ids)?;
    Ok(tape.matmul(weights, embedded)?)
}

/// Softmax over boxes of `w_score . normalize((W r) * text)`.
pub fn locate(tape: &mut Tape, params: &BoundParams, text: Var, boxes: Var) -> Result<Var> {
    let proj_t = tape.transpose(params.locate_projection)?;
    let projected = tape.matmul(boxes, proj_t)?;
    let joint = tape.mul_rows(projected, text)?;
    let normalized = tape.l2_normalize(joint)?;
    let width = tape.value(params.locate_score).len();
    let scorer = tape.reshape(params.locate_score, &[width])?;
    let scores = tape.matmul(normalized, scorer)?;
    Ok(tape.softmax(scores)?)
}

/// Pair scores as an `[n, n]` matrix indexed `[input j, output i]`.
pub fn relation_scores(tape: &mut Tape, params: &BoundParams, text: Var, pairs: Var, n: usize) -> Result<Var> {
    let proj_t = tape.transpose(params.relate_projection)?;
    let projected = tape.matmul(pairs, proj_t)?;
    let joint = tape.mul_rows(projected, text)?;
    let normalized = tape.l2_normalize(joint)?;
    let width = tape.value(params.relate_score).len();
    let scorer = tape.reshape(params.relate_score, &[width])?;
    let scores = tape.matmul(normalized, scorer)?;
    Ok(tape.reshape(scores, &[n, n])?)
}

/// Transfers the input grounding through the relation matrix.
pub fn relate(
    tape: &mut Tape,
    params: &BoundParams,
    norm: RelateNorm,
    text: Var,
    pairs: Var,
    n: usize,
    input: Var,
) -> Result<Var> {
    check_distribution(tape.value(input).data())?;
    let scores = relation_scores(tape, params, text, pairs, n)?;
    match norm {
        RelateNorm::ColumnSoftmax => {
            let columns = tape.softmax(scores)?;
            Ok(tape.matmul(input, columns)?)
        }
        RelateNorm::Renormalize => {
            let mixed = tape.matmul(input, scores)?;
            Ok(tape.softmax(mixed)?)
        }
    }
}

pub fn intersect(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    check_distribution(tape.value(p).data())?;
    check_distribution(tape.value(q).data())?;
    let product = tape.mul(p, q)?;
    let mass: f64 = tape.value(product).data().iter().sum();
    if mass < MIN_INTERSECT_MASS {
        return Err(GroundingError::VanishingMass { mass });
    }
    Ok(tape.renormalize(product)?)
}

/// Accepts vectors with non-negative entries summing to 1 within 1e-6.
pub fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
        return Err(GroundingError::DistributionNotNormalized { sum });
    }
    Ok(())
}

/// Runs every node in topological order; returns one handle per node id.
pub fn execute(
    tape: &mut Tape,
    params: &BoundParams,
    model: &GroundNet,
    graph: &ComputationGraph,
    scene: &SceneTensors,
) -> Result<Vec<Var>> {
    if model.config.locate_text != LocateText::NodePhrase {
        return Err(GroundingError::UnsupportedAblation(model.config.locate_text));
    }
    let order = graph.topological_order()?;
    let boxes = tape.constant(scene.boxes.clone());
    let mut pairs = None;
    let mut outputs: Vec<Option<Var>> = vec![None; graph.len()];
    for id in order {
        let node = graph.node(id);
        let input = |k: usize| outputs[node.inputs[k]].expect("topological order");
        let result = (|| -> Result<Var> {
            match node.kind {
                NodeKind::Locate => {
                    let ids = phrase_ids(model, &node.phrase)?;
                    let text = attend(tape, params, model.config.hidden, &ids)?;
                    locate(tape, params, text, boxes)
                }
                NodeKind::Relate => {
                    let ids = phrase_ids(model, &node.phrase)?;
                    let text = attend(tape, params, model.config.hidden, &ids)?;
                    let pairs = *pairs.get_or_insert_with(|| tape.constant(scene.pairs.clone()));
                    relate(tape, params, model.config.relate_norm, text, pairs, scene.count, input(0))
                }
                NodeKind::Intersect => intersect(tape, input(0), input(1)),
            }
        })()
        .map_err(|e| GroundingError::AtNode { id, source: Box::new(e) })?;
        outputs[id] = Some(result);
    }
    Ok(outputs.into_iter().map(|v| v.expect("every node evaluated")).collect())
}

/// `-ln p[target]`.
pub fn nll(tape: &mut Tape, distribution: Var, target: usize) -> Result<Var> {
    let p = tape.select(distribution, target)?;
    let log = tape.ln(p)?;
    Ok(tape.scale(log, -1.0)?)
}
