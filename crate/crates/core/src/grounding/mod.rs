//! The neural modules (`Attend`, `Locate`, `Relate`, `Intersect`) and the
//! executor that runs a computation graph over a scene.
//!
//! The functions here are the inference entry points; each records a
//! fresh tape with frozen parameters. Training goes through [`forward`]
//! directly so it can differentiate the same code path.

pub mod forward;
mod params;

pub use forward::{SceneTensors, MIN_INTERSECT_MASS};
pub use params::{
    BoundCell, BoundParams, GroundNet, LocateParams, LocateText, LstmCell, ModelConfig, RelateNorm,
    RelateParams, TextEncoderParams, Vocabulary, NULL, UNK,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{write_dot, ComputationGraph, GraphError, NodeKind};
use crate::scene::{Scene, SceneError};
use crate::tensor::{argmax, Tape, TensorError};

pub use crate::scene::spatial_features;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("empty phrase and null-token substitution is disabled")]
    EmptyPhrase,
    #[error("box features have length {found}, model expects {expected}")]
    FeatureLengthMismatch { expected: usize, found: usize },
    #[error("input distribution sums to {sum}, not 1")]
    DistributionNotNormalized { sum: f64 },
    #[error("intersection mass {mass} is too small to renormalise")]
    VanishingMass { mass: f64 },
    #[error("locate text mode {0:?} is not implemented")]
    UnsupportedAblation(LocateText),
    #[error("node {id}: {source}")]
    AtNode { id: usize, source: Box<GroundingError> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type Result<T> = std::result::Result<T, GroundingError>;

/// Text vector for a phrase.
pub fn attend(model: &GroundNet, phrase: &[String]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let ids = forward::phrase_ids(model, phrase)?;
    let out = forward::attend(&mut tape, &params, model.config.hidden, &ids)?;
    Ok(tape.value(out).data().to_vec())
}

/// Attention weights `Attend` assigns to the words of a phrase.
pub fn attention_weights(model: &GroundNet, phrase: &[String]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let ids = forward::phrase_ids(model, phrase)?;
    let (weights, _) = forward::attention(&mut tape, &params, model.config.hidden, &ids)?;
    Ok(tape.value(weights).data().to_vec())
}

/// Distribution over the scene's boxes for a noun phrase.
pub fn locate(model: &GroundNet, phrase: &[String], scene: &Scene) -> Result<Vec<f64>> {
    let inputs = SceneTensors::new(scene, model.config.vis_dim)?;
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let ids = forward::phrase_ids(model, phrase)?;
    let text = forward::attend(&mut tape, &params, model.config.hidden, &ids)?;
    let boxes = tape.constant(inputs.boxes);
    let out = forward::locate(&mut tape, &params, text, boxes)?;
    Ok(tape.value(out).data().to_vec())
}

/// Distribution over boxes related by `phrase` to the grounding `input`.
pub fn relate(model: &GroundNet, phrase: &[String], scene: &Scene, input: &[f64]) -> Result<Vec<f64>> {
    let inputs = SceneTensors::new(scene, model.config.vis_dim)?;
    if input.len() != inputs.count {
        return Err(TensorError::ShapeMismatch {
            op: "relate",
            detail: format!("{} boxes, input of length {}", inputs.count, input.len()),
        }
        .into());
    }
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let ids = forward::phrase_ids(model, phrase)?;
    let text = forward::attend(&mut tape, &params, model.config.hidden, &ids)?;
    let pairs = tape.constant(inputs.pairs);
    let dist = tape.constant(crate::tensor::Tensor::vector(input.to_vec()));
    let out = forward::relate(&mut tape, &params, model.config.relate_norm, text, pairs, inputs.count, dist)?;
    Ok(tape.value(out).data().to_vec())
}

/// Normalised elementwise product of two distributions.
pub fn intersect(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = tape.constant(crate::tensor::Tensor::vector(p.to_vec()));
    let q = tape.constant(crate::tensor::Tensor::vector(q.to_vec()));
    let out = forward::intersect(&mut tape, p, q)?;
    Ok(tape.value(out).data().to_vec())
}

/// Runs the whole graph and keeps every node's grounding.
pub fn execute(model: &GroundNet, graph: &ComputationGraph, scene: &Scene) -> Result<GroundingResult> {
    let inputs = SceneTensors::new(scene, model.config.vis_dim)?;
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let outputs = forward::execute(&mut tape, &params, model, graph, &inputs)?;
    let distributions: Vec<Vec<f64>> = outputs.iter().map(|v| tape.value(*v).data().to_vec()).collect();
    Ok(GroundingResult::new(graph.root, distributions))
}

/// Per-node groundings of one graph execution.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub root: usize,
    /// Indexed by node id, each a distribution over the scene's boxes.
    pub distributions: Vec<Vec<f64>>,
    /// Box index with the highest probability, per node id.
    pub argmax: Vec<usize>,
}

impl GroundingResult {
    pub fn new(root: usize, distributions: Vec<Vec<f64>>) -> Self {
        let argmax = distributions.iter().map(|d| argmax(d)).collect();
        GroundingResult { root, distributions, argmax }
    }

    pub fn root_distribution(&self) -> &[f64] {
        &self.distributions[self.root]
    }

    pub fn prediction(&self) -> usize {
        self.argmax[self.root]
    }

    pub fn to_report(&self, graph: &ComputationGraph, scene: &Scene) -> GroundingReport {
        let box_ids: Vec<u32> = scene.boxes.iter().map(|b| b.id).collect();
        let nodes = graph
            .nodes
            .iter()
            .map(|n| NodeGrounding {
                id: n.id,
                kind: n.kind,
                phrase: n.phrase.join(" "),
                argmax_box: box_ids[self.argmax[n.id]],
                distribution: self.distributions[n.id].clone(),
            })
            .collect();
        GroundingReport { scene: scene.id, root: self.root, box_ids, nodes }
    }

    /// DOT rendering where each node shows its most likely box and is
    /// shaded by that box's probability.
    pub fn annotated_dot(&self, graph: &ComputationGraph, scene: &Scene) -> String {
        write_dot(graph, |node| {
            let best = self.argmax[node.id];
            let p = self.distributions[node.id][best];
            let shade = 255 - (p.clamp(0.0, 1.0) * 155.0).round() as u8;
            let line = format!("box {} (p={:.3})", scene.boxes[best].id, p);
            Some((line, format!("#{shade:02x}ff{shade:02x}")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGrounding {
    pub id: usize,
    pub kind: NodeKind,
    pub phrase: String,
    pub argmax_box: u32,
    pub distribution: Vec<f64>,
}

/// Structured export of a [`GroundingResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub scene: u64,
    pub root: usize,
    pub box_ids: Vec<u32>,
    pub nodes: Vec<NodeGrounding>,
}
