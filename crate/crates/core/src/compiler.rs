//! Translation of a constituency tree into a computation graph of
//! `Locate` / `Relate` / `Intersect` nodes.
//!
//! At each tree node the compiler looks for a left noun phrase in the
//! leftmost child branch that contains one, and a right noun phrase among
//! the remaining children. Both are the longest NP in their region
//! (leftmost, then shallowest, on ties). The words between them become a
//! `Relate` phrase, the two NPs are compiled recursively, and the results
//! are joined as `Intersect(left, Relate(right))`. A tree without an NP
//! below it becomes a single `Locate` over its content words.
//!
//! When only a left NP exists the compiler recurses into it, and if content
//! words survive outside it they are kept as an extra `Locate` joined with
//! `Intersect`. NPs spanning the whole current tree (unary chains) are
//! skipped so recursion always moves to a strictly smaller constituent.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{is_noun_phrase, ParseTree, Span};

/// Words dropped when decorating nodes with phrases.
pub const DEFAULT_STOPWORDS: [&str; 8] = ["a", "an", "the", "this", "that", "these", "those", "of"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("noun phrases overlap: {left} and {right}")]
    OverlappingSpans { left: Span, right: Span },
    #[error("constituent {span} has no content words for a Locate node")]
    EmptyPhraseAtLocate { span: Span },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Format(String),
    #[error("node {id}: {reason}")]
    Invalid { id: usize, reason: String },
}

/// Function-word filter applied to node phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub stopwords: BTreeSet<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon { stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect() }
    }
}

impl Lexicon {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Lexicon { stopwords: words.into_iter().map(|w| w.into().to_lowercase()).collect() }
    }

    pub fn is_function_word(&self, word: &str) -> bool {
        self.stopwords.contains(&word.to_lowercase())
    }

    /// Content words of `words`, order preserved.
    pub fn filter<'a, I>(&self, words: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        words
            .into_iter()
            .filter(|w| !self.is_function_word(w))
            .map(str::to_string)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Locate,
    Relate,
    Intersect,
}

impl NodeKind {
    pub fn arity(self) -> usize {
        match self {
            NodeKind::Locate => 0,
            NodeKind::Relate => 1,
            NodeKind::Intersect => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Locate => "Locate",
            NodeKind::Relate => "Relate",
            NodeKind::Intersect => "Intersect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    pub phrase: Vec<String>,
    pub inputs: Vec<usize>,
    pub source_span: Span,
}

/// Tree-shaped DAG of grounding nodes. Node `id` equals its index and
/// inputs always precede their consumer, so index order is topological.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub expression: Vec<String>,
    pub root: usize,
    pub nodes: Vec<GraphNode>,
}

impl ComputationGraph {
    pub fn node(&self, id: usize) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Checks arity, id layout, acyclicity and the single-consumer rule.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Format("graph has no nodes".into()));
        }
        let n = self.nodes.len();
        let mut consumers = vec![0usize; n];
        for (idx, node) in self.nodes.iter().enumerate() {
            let bad = |reason: String| GraphError::Invalid { id: node.id, reason };
            if node.id != idx {
                return Err(bad(format!("id does not match position {idx}")));
            }
            if node.inputs.len() != node.kind.arity() {
                return Err(bad(format!(
                    "{} takes {} inputs, found {}",
                    node.kind.name(),
                    node.kind.arity(),
                    node.inputs.len()
                )));
            }
            if node.kind == NodeKind::Locate && node.phrase.is_empty() {
                return Err(bad("Locate with empty phrase".into()));
            }
            for &input in &node.inputs {
                if input >= n {
                    return Err(bad(format!("input {input} does not exist")));
                }
                consumers[input] += 1;
            }
        }
        if self.root >= n {
            return Err(GraphError::Format(format!("root {} does not exist", self.root)));
        }
        for (id, &c) in consumers.iter().enumerate() {
            let expected = usize::from(id != self.root);
            if c != expected {
                return Err(GraphError::Invalid {
                    id,
                    reason: format!("consumed {c} times, expected {expected}"),
                });
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Kahn ordering from the input edges; smallest ready id first.
    pub fn topological_order(&self) -> Result<Vec<usize>, GraphError> {
        let n = self.nodes.len();
        let mut pending: Vec<usize> = self.nodes.iter().map(|node| node.inputs.len()).collect();
        let mut consumers_of = vec![Vec::new(); n];
        for node in &self.nodes {
            for &input in &node.inputs {
                if input < n {
                    consumers_of[input].push(node.id);
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &c in &consumers_of[id] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|i| pending[*i] > 0).unwrap_or(0);
            return Err(GraphError::Invalid { id: stuck, reason: "cycle".into() });
        }
        Ok(order)
    }

    /// Ids of every node except the root.
    pub fn intermediate_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| i != self.root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let graph: ComputationGraph =
            serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn to_dot(&self) -> String {
        write_dot(self, |_| None)
    }
}

/// Renders DOT with one node per graph node labelled `kind: phrase`.
/// `extra` can append a second label line and a fill colour per node.
pub fn write_dot<F>(graph: &ComputationGraph, extra: F) -> String
where
    F: Fn(&GraphNode) -> Option<(String, String)>,
{
    let mut out = String::from("digraph computation {\n  rankdir=BT;\n  node [shape=box];\n");
    for node in &graph.nodes {
        let mut label = node.kind.name().to_string();
        if !node.phrase.is_empty() {
            label.push_str(": ");
            label.push_str(&node.phrase.join(" "));
        }
        let mut attrs = String::new();
        if let Some((line, fill)) = extra(node) {
            label.push_str("\\n");
            label.push_str(&line);
            let _ = write!(attrs, ", style=filled, fillcolor=\"{fill}\"");
        }
        if node.id == graph.root {
            attrs.push_str(", peripheries=2");
        }
        let _ = writeln!(out, "  n{} [label=\"{}\"{}];", node.id, escape_dot(&label), attrs);
    }
    for node in &graph.nodes {
        for &input in &node.inputs {
            let _ = writeln!(out, "  n{} -> n{};", input, node.id);
        }
    }
    out.push_str("}\n");
    out
}

fn escape_dot(s: &str) -> String {
    s.replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Dot,
    Json,
}

pub fn export_graph(graph: &ComputationGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Dot => graph.to_dot(),
        GraphFormat::Json => graph.to_json(),
    }
}

/// Longest NP among the proper descendants of `tree` lying inside
/// `region`. Ties go to the leftmost start, then the shallowest node.
pub fn find_np(tree: &ParseTree, region: Span) -> Option<&ParseTree> {
    largest_np(tree, region, None)
}

fn largest_np(tree: &ParseTree, region: Span, skip: Option<Span>) -> Option<&ParseTree> {
    tree.descendants()
        .into_iter()
        .filter(|(n, _)| is_noun_phrase(n.label()) && region.contains(&n.span()))
        .filter(|(n, _)| skip != Some(n.span()))
        .min_by_key(|(n, depth)| (std::cmp::Reverse(n.span().len()), n.span().start, *depth))
        .map(|(n, _)| n)
}

/// Content words strictly between two noun phrases.
pub fn find_pp(
    tree: &ParseTree,
    left_np: &ParseTree,
    right_np: &ParseTree,
    lexicon: &Lexicon,
) -> Result<Vec<String>, CompileError> {
    let (l, r) = (left_np.span(), right_np.span());
    if l.end > r.start {
        return Err(CompileError::OverlappingSpans { left: l, right: r });
    }
    let gap = Span::new(l.end, r.start);
    let words = crate::treebank::yield_tokens(tree, gap)
        .map_err(|_| CompileError::OverlappingSpans { left: l, right: r })?;
    Ok(lexicon.filter(words))
}

struct Builder<'l> {
    lexicon: &'l Lexicon,
    nodes: Vec<GraphNode>,
}

impl Builder<'_> {
    fn push(&mut self, kind: NodeKind, phrase: Vec<String>, inputs: Vec<usize>, span: Span) -> usize {
        let id = self.nodes.len();
        self.nodes.push(GraphNode { id, kind, phrase, inputs, source_span: span });
        id
    }

    fn locate(&mut self, phrase: Vec<String>, span: Span) -> Result<usize, CompileError> {
        if phrase.is_empty() {
            return Err(CompileError::EmptyPhraseAtLocate { span });
        }
        Ok(self.push(NodeKind::Locate, phrase, Vec::new(), span))
    }

    fn compile(&mut self, tree: &ParseTree) -> Result<usize, CompileError> {
        if let [only] = tree.children() {
            if !only.is_leaf() {
                return self.compile(only);
            }
        }
        let whole = tree.span();
        let split = tree.children().iter().find_map(|child| {
            largest_np(tree, child.span(), Some(whole)).map(|np| (np, child.span().end))
        });
        let Some((left_np, branch_end)) = split else {
            let words = self.lexicon.filter(tree.tokens());
            return self.locate(words, whole);
        };
        let right_region = Span::new(branch_end, whole.end);
        match largest_np(tree, right_region, Some(whole)) {
            Some(right_np) => {
                let relation = find_pp(tree, left_np, right_np, self.lexicon)?;
                let left = self.compile(left_np)?;
                let right = self.compile(right_np)?;
                let gap = Span::new(left_np.span().end, right_np.span().start);
                let relate = self.push(NodeKind::Relate, relation, vec![right], gap);
                Ok(self.push(NodeKind::Intersect, Vec::new(), vec![left, relate], whole))
            }
            None => {
                let inner = left_np.span();
                let residual = self.lexicon.filter(
                    tree.leaves()
                        .into_iter()
                        .filter(|leaf| !inner.contains(&leaf.span()))
                        .filter_map(|leaf| leaf.token()),
                );
                let left = self.compile(left_np)?;
                if residual.is_empty() {
                    return Ok(left);
                }
                let rest = self.locate(residual, whole)?;
                Ok(self.push(NodeKind::Intersect, Vec::new(), vec![rest, left], whole))
            }
        }
    }
}

/// Compiles a parse tree into a computation graph.
pub fn generate_computation_graph(
    tree: &ParseTree,
    lexicon: &Lexicon,
) -> Result<ComputationGraph, CompileError> {
    let mut builder = Builder { lexicon, nodes: Vec::new() };
    let root = builder.compile(tree)?;
    Ok(ComputationGraph {
        expression: tree.tokens().into_iter().map(str::to_string).collect(),
        root,
        nodes: builder.nodes,
    })
}

/// Running example: "half of a sandwich on the right side of a plate
/// nearest a coffee mug".
pub const SANDWICH_TREE: &str = "(NP (NP (NN half) (IN of) (DT a) (NN sandwich)) \
(PP (IN on) (DT the) (JJ right) (NN side) (IN of) \
(NP (NP (DT a) (NN plate)) (PP (JJS nearest) (NP (DT a) (NN coffee) (NN mug))))))";
