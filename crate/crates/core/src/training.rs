//! SGD training with a per-epoch decaying learning rate, checkpoints, and
//! the two evaluation metrics: target accuracy and supporting-object
//! accuracy.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{generate_computation_graph, CompileError, ComputationGraph, Lexicon, NodeKind};
use crate::grounding::{self, forward, GroundNet, GroundingError, ModelConfig, RelateNorm, SceneTensors, Vocabulary};
use crate::scene::{Scene, Split};
use crate::tensor::{stream_rng, NamedTensor, Tape, Tensor, TensorError};
use crate::treebank::TreeError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training scenes")]
    EmptyTrainingSet,
    #[error("non-finite {what} on scene {scene}")]
    NonFiniteValue { scene: u64, what: &'static str },
    #[error("scene {scene}: {source}")]
    Parse { scene: u64, source: TreeError },
    #[error("scene {scene}: {source}")]
    Compile { scene: u64, source: CompileError },
    #[error("scene {scene}: {source}")]
    Grounding { scene: u64, source: GroundingError },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Nodes whose argmax counts as a supporting-object prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportingFrom {
    /// Every node except the root.
    #[default]
    AllIntermediate,
    LocateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    /// Factor applied to the learning rate after each epoch.
    pub lr_decay: f64,
    /// Coefficient of the squared Frobenius norm of every matrix.
    pub weight_decay: f64,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub hidden: usize,
    pub embed: usize,
    /// Visual feature length; taken from the data when absent.
    pub vis_dim: Option<usize>,
    pub relate_norm: RelateNorm,
    pub supporting_from: SupportingFrom,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            lr0: 0.01,
            lr_decay: 0.4,
            weight_decay: 0.0005,
            grad_clip: 10.0,
            seed: 0,
            hidden: 64,
            embed: 64,
            vis_dim: None,
            relate_norm: RelateNorm::ColumnSoftmax,
            supporting_from: SupportingFrom::AllIntermediate,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 || self.hidden == 0 || self.embed == 0 || self.vis_dim == Some(0) {
            return bad("epochs, hidden, embed and vis_dim must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and >= 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return bad("weight_decay and grad_clip must be >= 0");
        }
        Ok(())
    }

    /// Learning rate of every epoch.
    pub fn lr_schedule(&self) -> Vec<f64> {
        (0..self.epochs).map(|e| self.lr0 * self.lr_decay.powi(e as i32)).collect()
    }
}

/// A scene with its compiled graph.
#[derive(Debug, Clone)]
pub struct Instance<'a> {
    pub scene: &'a Scene,
    pub graph: ComputationGraph,
}

pub fn compile_scene(scene: &Scene, lexicon: &Lexicon) -> Result<ComputationGraph> {
    let tree = scene.parse_tree().map_err(|source| TrainError::Parse { scene: scene.id, source })?;
    generate_computation_graph(&tree, lexicon).map_err(|source| TrainError::Compile { scene: scene.id, source })
}

pub fn compile_all<'a>(scenes: &[&'a Scene], lexicon: &Lexicon) -> Result<Vec<Instance<'a>>> {
    scenes.iter().map(|s| Ok(Instance { scene: s, graph: compile_scene(s, lexicon)? })).collect()
}

/// Value and gradient of `lambda * |W|^2`.
pub fn weight_decay_term(w: &Tensor, lambda: f64) -> (f64, Tensor) {
    let grad = Tensor::new(w.shape().to_vec(), w.data().iter().map(|v| 2.0 * lambda * v).collect())
        .expect("same shape");
    (lambda * w.norm_sq(), grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Owns the model while it is being fitted.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: GroundNet,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: GroundNet, config: TrainConfig) -> Self {
        Trainer { model, config }
    }

    /// Loss and parameter gradients (weight decay included) for one
    /// instance, in canonical parameter order.
    pub fn gradients(&self, instance: &Instance) -> Result<(f64, Vec<Tensor>)> {
        let scene = instance.scene;
        let wrap = |source| TrainError::Grounding { scene: scene.id, source };
        let inputs = SceneTensors::new(scene, self.model.config.vis_dim).map_err(wrap)?;
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let outputs = forward::execute(&mut tape, &params, &self.model, &instance.graph, &inputs).map_err(wrap)?;
        let loss = forward::nll(&mut tape, outputs[instance.graph.root], scene.target_index()).map_err(wrap)?;
        let mut total = tape.value(loss).item();
        if !total.is_finite() {
            return Err(TrainError::NonFiniteValue { scene: scene.id, what: "loss" });
        }
        let mut grads = tape.backward(loss)?;
        let mut out = Vec::new();
        for ((_, w), var) in self.model.named_params().into_iter().zip(params.in_order()) {
            let mut g = grads.take(*var).unwrap_or_else(|| Tensor::zeros(w.shape()));
            if w.rank() == 2 && self.config.weight_decay > 0.0 {
                let (penalty, decay) = weight_decay_term(w, self.config.weight_decay);
                total += penalty;
                for (a, b) in g.data_mut().iter_mut().zip(decay.data()) {
                    *a += b;
                }
            }
            out.push(g);
        }
        Ok((total, out))
    }

    /// One SGD update on one instance.
    pub fn step(&mut self, instance: &Instance, lr: f64) -> Result<StepStats> {
        let (loss, mut grads) = self.gradients(instance)?;
        let grad_norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFiniteValue { scene: instance.scene.id, what: "gradient" });
        }
        let clipped = self.config.grad_clip > 0.0 && grad_norm > self.config.grad_clip;
        let scale = if clipped { self.config.grad_clip / grad_norm } else { 1.0 };
        for (w, g) in self.model.params_mut().into_iter().zip(&mut grads) {
            for (p, d) in w.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * scale * d;
            }
        }
        Ok(StepStats { loss, grad_norm, clipped })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub clipped_steps: usize,
    pub val_accuracy: Option<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "groundnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub params: Vec<NamedTensor>,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn new(model: &GroundNet, train: TrainConfig, history: Vec<EpochStats>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            train,
            vocab: model.vocab.clone(),
            params: model.to_named_tensors(),
            history,
        }
    }

    pub fn to_model(&self) -> Result<GroundNet> {
        let mut model = GroundNet::new(self.model.clone(), self.vocab.clone(), 0);
        model.load_named_tensors(&self.params)?;
        Ok(model)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_text(&std::fs::read_to_string(path)?)
    }
}

fn split_of(scenes: &[Scene], split: Split) -> Vec<&Scene> {
    scenes.iter().filter(|s| s.split == split).collect()
}

/// Fits a fresh model on the train split, reporting val accuracy after
/// each epoch. `log` receives one line per epoch.
pub fn train(scenes: &[Scene], config: &TrainConfig, mut log: impl FnMut(&EpochStats)) -> Result<Checkpoint> {
    config.validate()?;
    let train_scenes = split_of(scenes, Split::Train);
    if train_scenes.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let vis_dim = config.vis_dim.unwrap_or_else(|| train_scenes[0].feature_len());
    let model_config = ModelConfig {
        hidden: config.hidden,
        embed: config.embed,
        vis_dim,
        relate_norm: config.relate_norm,
        ..ModelConfig::default()
    };
    let vocab = Vocabulary::from_words(train_scenes.iter().flat_map(|s| s.expression.iter()));
    let model = GroundNet::new(model_config, vocab, config.seed);
    let lexicon = Lexicon::default();
    let train_set = compile_all(&train_scenes, &lexicon)?;
    let val_scenes: Vec<Scene> = split_of(scenes, Split::Val).into_iter().cloned().collect();

    let mut trainer = Trainer::new(model, config.clone());
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for (epoch, lr) in config.lr_schedule().into_iter().enumerate() {
        order.shuffle(&mut stream_rng(config.seed, SHUFFLE_STREAM + epoch as u64));
        let (mut loss_sum, mut clipped_steps) = (0.0, 0);
        for &i in &order {
            let stats = trainer.step(&train_set[i], lr)?;
            loss_sum += stats.loss;
            clipped_steps += stats.clipped as usize;
        }
        let val_accuracy = if val_scenes.is_empty() {
            None
        } else {
            Some(evaluate(&trainer.model, &val_scenes, config.supporting_from)?.target_accuracy)
        };
        let stats = EpochStats { epoch, lr, mean_loss: loss_sum / order.len() as f64, clipped_steps, val_accuracy };
        log(&stats);
        history.push(stats);
    }
    Ok(Checkpoint::new(&trainer.model, config.clone(), history))
}

/// Shuffle streams sit far from the parameter initialisation streams.
const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub scene: u64,
    pub target: u32,
    pub predicted: u32,
    pub target_correct: bool,
    pub supporting_gold: BTreeSet<u32>,
    pub supporting_predicted: BTreeSet<u32>,
    /// Absent when the scene has no gold supporting objects.
    pub supporting_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub target_correct: usize,
    pub target_accuracy: f64,
    /// Instances with at least one gold supporting object.
    pub supporting_instances: usize,
    pub supporting_correct: usize,
    pub supporting_accuracy: f64,
    pub records: Vec<InstanceRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<InstanceRecord>) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let target_correct = records.iter().filter(|r| r.target_correct).count();
        let supporting_instances = records.iter().filter(|r| r.supporting_correct.is_some()).count();
        let supporting_correct = records.iter().filter(|r| r.supporting_correct == Some(true)).count();
        EvalReport {
            instances: records.len(),
            target_correct,
            target_accuracy: ratio(target_correct, records.len()),
            supporting_instances,
            supporting_correct,
            supporting_accuracy: ratio(supporting_correct, supporting_instances),
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "metric", "correct", "total", "accuracy");
        let row = |out: &mut String, name: &str, c: usize, n: usize, acc: f64| {
            let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>8.2}%", name, c, n, 100.0 * acc);
        };
        row(&mut out, "target", self.target_correct, self.instances, self.target_accuracy);
        row(&mut out, "supporting", self.supporting_correct, self.supporting_instances, self.supporting_accuracy);
        out
    }
}

/// Scores one instance from its per-node groundings.
pub fn score_instance(
    scene: &Scene,
    graph: &ComputationGraph,
    result: &grounding::GroundingResult,
    from: SupportingFrom,
) -> InstanceRecord {
    let id = |k: usize| scene.boxes[k].id;
    let predicted = id(result.prediction());
    let supporting_predicted: BTreeSet<u32> = graph
        .nodes
        .iter()
        .filter(|n| n.id != graph.root)
        .filter(|n| from == SupportingFrom::AllIntermediate || n.kind == NodeKind::Locate)
        .map(|n| id(result.argmax[n.id]))
        .collect();
    let supporting_correct =
        (!scene.supporting.is_empty()).then(|| !supporting_predicted.is_disjoint(&scene.supporting));
    InstanceRecord {
        scene: scene.id,
        target: scene.target,
        predicted,
        target_correct: predicted == scene.target,
        supporting_gold: scene.supporting.clone(),
        supporting_predicted,
        supporting_correct,
    }
}

/// Target and supporting accuracy over `scenes`, scored in parallel.
pub fn evaluate(model: &GroundNet, scenes: &[Scene], from: SupportingFrom) -> Result<EvalReport> {
    let lexicon = Lexicon::default();
    let records = scenes
        .par_iter()
        .map(|scene| {
            let graph = compile_scene(scene, &lexicon)?;
            let result = grounding::execute(model, &graph, scene)
                .map_err(|source| TrainError::Grounding { scene: scene.id, source })?;
            Ok(score_instance(scene, &graph, &result, from))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests;
