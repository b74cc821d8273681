use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{stream_rng, xavier_init, NamedTensor, Tape, Tensor, TensorError, Var};

/// Relation score normalisation before the matrix-vector product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelateNorm {
    /// Softmax over output boxes for each input box; the result is an
    /// exact mixture of distributions.
    #[default]
    ColumnSoftmax,
    /// Raw scores times the input distribution, then a softmax over boxes.
    Renormalize,
}

/// Which text feeds `Attend` for a `Locate` node. Only the node's own
/// phrase is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocateText {
    #[default]
    NodePhrase,
    FreeForm,
    SyntaxGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Recurrent hidden size per direction.
    pub hidden: usize,
    /// Word embedding size; also the joint text/box space.
    pub embed: usize,
    /// Visual feature length per box.
    pub vis_dim: usize,
    pub relate_norm: RelateNorm,
    pub locate_text: LocateText,
    /// Feed the null token to `Attend` for empty phrases.
    pub null_token: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            embed: 64,
            vis_dim: 10,
            relate_norm: RelateNorm::ColumnSoftmax,
            locate_text: LocateText::NodePhrase,
            null_token: true,
        }
    }
}

pub const UNK: &str = "<unk>";
pub const NULL: &str = "<null>";

/// Word list with two reserved entries: unknown words (0) and the null
/// phrase (1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK_ID: usize = 0;
    pub const NULL_ID: usize = 1;

    /// Builds a vocabulary from words in sorted, de-duplicated order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sorted: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        sorted.sort();
        sorted.dedup();
        sorted.retain(|w| w != UNK && w != NULL);
        let mut all = vec![UNK.to_string(), NULL.to_string()];
        all.extend(sorted);
        Vocabulary::from(all)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

/// Gated recurrent cell; gates stacked as input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `Attend` parameters: embeddings, two bidirectional recurrent layers and
/// the attention row.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub embedding: Tensor,
    /// Layer 1 forward, layer 1 backward, layer 2 forward, layer 2 backward.
    pub cells: [LstmCell; 4],
    pub attention: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocateParams {
    /// `[E, D_vis + 5]`
    pub projection: Tensor,
    /// `[1, E]`
    pub score: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelateParams {
    /// `[E, 10]`
    pub projection: Tensor,
    /// `[1, E]`
    pub score: Tensor,
}

/// All learned state, shared by every node of every graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundNet {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub text: TextEncoderParams,
    pub locate: LocateParams,
    pub relate: RelateParams,
}

const CELL_NAMES: [&str; 4] = ["l1.fw", "l1.bw", "l2.fw", "l2.bw"];

impl GroundNet {
    /// Glorot-initialised model; each parameter draws from its own RNG
    /// stream. Forget-gate biases start at 1.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Self {
        let (h, e, v) = (config.hidden, config.embed, vocab.len());
        let mut stream = 0u64;
        let mut draw = |rows: usize, cols: usize| {
            let t = xavier_init([rows, cols], &mut stream_rng(seed, stream));
            stream += 1;
            t
        };
        let embedding = draw(v, e);
        let cell_inputs = [e, e, 2 * h, 2 * h];
        let cells = cell_inputs.map(|input| {
            let weight = draw(4 * h, input + h);
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            LstmCell { weight, bias }
        });
        let attention = draw(1, 4 * h);
        let locate = LocateParams { projection: draw(e, config.vis_dim + 5), score: draw(1, e) };
        let relate = RelateParams { projection: draw(e, 10), score: draw(1, e) };
        GroundNet { config, vocab, text: TextEncoderParams { embedding, cells, attention }, locate, relate }
    }

    /// Parameters in their canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("attend.embedding".to_string(), &self.text.embedding)];
        for (name, cell) in CELL_NAMES.iter().zip(&self.text.cells) {
            out.push((format!("attend.{name}.weight"), &cell.weight));
            out.push((format!("attend.{name}.bias"), &cell.bias));
        }
        out.push(("attend.attention".into(), &self.text.attention));
        out.push(("locate.projection".into(), &self.locate.projection));
        out.push(("locate.score".into(), &self.locate.score));
        out.push(("relate.projection".into(), &self.relate.projection));
        out.push(("relate.score".into(), &self.relate.score));
        out
    }

    /// Mutable parameters, same order as [`GroundNet::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.text.embedding];
        for cell in self.text.cells.iter_mut() {
            out.push(&mut cell.weight);
            out.push(&mut cell.bias);
        }
        out.push(&mut self.text.attention);
        out.push(&mut self.locate.projection);
        out.push(&mut self.locate.score);
        out.push(&mut self.relate.projection);
        out.push(&mut self.relate.score);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        self.named_params().into_iter().map(|(n, t)| NamedTensor::new(n, t)).collect()
    }

    /// Replaces parameters from a named list; names and shapes must match.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<(), TensorError> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        if names.len() != tensors.len() {
            return Err(TensorError::ParamFile(format!(
                "expected {} parameters, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(self.params_mut()).zip(tensors) {
            if &stored.name != name {
                return Err(TensorError::ParamFile(format!("expected {name}, found {}", stored.name)));
            }
            let t = stored.to_tensor()?;
            if t.shape() != slot.shape() {
                return Err(TensorError::ParamFile(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }

    /// All parameters concatenated in canonical order.
    pub fn flatten(&self) -> Tensor {
        Tensor::vector(self.named_params().iter().flat_map(|(_, t)| t.data().iter().copied()).collect())
    }

    /// Records every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.named_params().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        BoundParams::from_vars(vars)
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        BoundParams::from_vars(vars)
    }

    /// Views a flat vector (layout of [`GroundNet::flatten`]) as the
    /// parameters, so a single tensor can drive gradient checks.
    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<BoundParams, TensorError> {
        let mut offset = 0;
        let mut vars = Vec::new();
        for (_, t) in self.named_params() {
            let piece = tape.slice(flat, offset, t.len())?;
            vars.push(tape.reshape(piece, t.shape())?);
            offset += t.len();
        }
        Ok(BoundParams::from_vars(vars))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCell {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles for every parameter.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub embedding: Var,
    pub cells: [BoundCell; 4],
    pub attention: Var,
    pub locate_projection: Var,
    pub locate_score: Var,
    pub relate_projection: Var,
    pub relate_score: Var,
    order: Vec<Var>,
}

impl BoundParams {
    fn from_vars(vars: Vec<Var>) -> Self {
        let cell = |i: usize| BoundCell { weight: vars[1 + 2 * i], bias: vars[2 + 2 * i] };
        BoundParams {
            embedding: vars[0],
            cells: [cell(0), cell(1), cell(2), cell(3)],
            attention: vars[9],
            locate_projection: vars[10],
            locate_score: vars[11],
            relate_projection: vars[12],
            relate_score: vars[13],
            order: vars,
        }
    }

    /// Handles in canonical parameter order.
    pub fn in_order(&self) -> &[Var] {
        &self.order
    }
}
