//! Bracketed constituency trees (Penn Treebank style).
//!
//! A tree is read from text such as `(NP (DT the) (NN plate))`. Preterminals
//! collapse into leaves: `(NN plate)` is a single leaf labelled `NN` carrying
//! the token `plate`. Every node records the half-open interval of token
//! indices it covers, assigned by left-to-right leaf order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open interval `[start, end)` of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// True if `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("unbalanced parentheses at byte offset {offset}")]
    UnbalancedParens { offset: usize },
    #[error("empty tree at byte offset {offset}")]
    EmptyTree { offset: usize },
    #[error("node carries both a token and children at byte offset {offset}")]
    LeafWithChildren { offset: usize },
    #[error("unexpected input after the tree at byte offset {offset}")]
    TrailingInput { offset: usize },
    #[error("span {span} is outside the tree span {tree}")]
    SpanOutOfRange { span: Span, tree: Span },
}

/// A rooted, ordered, labelled constituency tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParseTree {
    label: String,
    children: Vec<ParseTree>,
    token: Option<String>,
    span: Span,
}

impl ParseTree {
    /// Builds a leaf at token position `index`.
    pub fn leaf(label: impl Into<String>, token: impl Into<String>, index: usize) -> Self {
        ParseTree {
            label: label.into(),
            children: Vec::new(),
            token: Some(token.into()),
            span: Span::new(index, index + 1),
        }
    }

    /// Builds an internal node; child spans must be contiguous.
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        assert!(!children.is_empty(), "internal node needs children");
        for pair in children.windows(2) {
            assert_eq!(pair[0].span.end, pair[1].span.start, "child spans must be contiguous");
        }
        let span = Span::new(children[0].span.start, children[children.len() - 1].span.end);
        ParseTree { label: label.into(), children, token: None, span }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ParseTree] {
        &self.children
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&ParseTree> {
        let mut out = Vec::with_capacity(self.span.len());
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a ParseTree>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    /// All tokens of the tree, in order.
    pub fn tokens(&self) -> Vec<&str> {
        self.leaves().into_iter().filter_map(|l| l.token()).collect()
    }

    /// Pre-order walk over proper descendants, yielding `(node, depth)` with
    /// depth 1 for the children of `self`.
    pub fn descendants(&self) -> Vec<(&ParseTree, usize)> {
        let mut out = Vec::new();
        let mut stack: Vec<(&ParseTree, usize)> =
            self.children.iter().rev().map(|c| (c, 1)).collect();
        while let Some((node, depth)) = stack.pop() {
            out.push((node, depth));
            stack.extend(node.children.iter().rev().map(|c| (c, depth + 1)));
        }
        out
    }

    /// Number of nodes whose label satisfies `pred`, including the root.
    pub fn count_labels(&self, pred: impl Fn(&str) -> bool) -> usize {
        let own = usize::from(pred(&self.label));
        own + self.descendants().iter().filter(|(n, _)| pred(&n.label)).count()
    }

    /// Canonical bracketed rendering, the inverse of [`read_ptb`].
    pub fn write_ptb(&self) -> String {
        let mut out = String::new();
        self.write_into(&mut out);
        out
    }

    fn write_into(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        if let Some(tok) = &self.token {
            out.push(' ');
            out.push_str(tok);
        }
        for c in &self.children {
            out.push(' ');
            c.write_into(out);
        }
        out.push(')');
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.write_ptb())
    }
}

impl std::str::FromStr for ParseTree {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        read_ptb(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<(usize, Tok<'_>)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push((start, Tok::Atom(&text[start..i])));
            }
        }
    }
    out
}

struct Reader<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
    next_leaf: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<(usize, Tok<'a>)> {
        self.toks.get(self.pos).copied()
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |(o, _)| o)
    }

    /// Parses one bracketed node; the cursor sits on its `(`.
    fn node(&mut self) -> Result<ParseTree, TreeError> {
        let (open_at, _) = self.peek().expect("caller checked for '('");
        self.pos += 1;
        let label = match self.peek() {
            Some((_, Tok::Atom(a))) => {
                self.pos += 1;
                a.to_string()
            }
            _ => String::new(),
        };
        let mut token: Option<(usize, String)> = None;
        let mut children = Vec::new();
        loop {
            match self.peek() {
                None => return Err(TreeError::UnbalancedParens { offset: self.end }),
                Some((_, Tok::Close)) => {
                    self.pos += 1;
                    break;
                }
                Some((at, Tok::Atom(a))) => {
                    if token.is_some() || !children.is_empty() {
                        return Err(TreeError::LeafWithChildren { offset: at });
                    }
                    token = Some((at, a.to_string()));
                    self.next_leaf += 1;
                    self.pos += 1;
                }
                Some((at, Tok::Open)) => {
                    if token.is_some() {
                        return Err(TreeError::LeafWithChildren { offset: at });
                    }
                    children.push(self.node()?);
                }
            }
        }
        match token {
            Some((_, tok)) => {
                Ok(ParseTree::leaf(label, tok, self.next_leaf - 1))
            }
            None if children.is_empty() => Err(TreeError::EmptyTree { offset: open_at }),
            None => Ok(ParseTree::node(label, children)),
        }
    }
}

/// Reads one bracketed tree. An outer unlabelled wrapper such as
/// `( (S ...) )` is stripped.
pub fn read_ptb(text: &str) -> Result<ParseTree, TreeError> {
    let mut reader = Reader { toks: lex(text), pos: 0, end: text.len(), next_leaf: 0 };
    let tree = match reader.peek() {
        None => return Err(TreeError::EmptyTree { offset: 0 }),
        Some((_, Tok::Open)) => reader.node()?,
        Some((at, Tok::Close)) => return Err(TreeError::UnbalancedParens { offset: at }),
        Some((at, Tok::Atom(_))) => return Err(TreeError::TrailingInput { offset: at }),
    };
    match reader.peek() {
        None => {}
        Some((at, Tok::Close)) => return Err(TreeError::UnbalancedParens { offset: at }),
        Some(_) => return Err(TreeError::TrailingInput { offset: reader.offset() }),
    }
    if tree.label.is_empty() && tree.children.len() == 1 {
        return Ok(tree.children.into_iter().next().expect("one child"));
    }
    Ok(tree)
}

/// Words of the leaves inside `span`, in order.
pub fn yield_tokens(tree: &ParseTree, span: Span) -> Result<Vec<&str>, TreeError> {
    if span.is_empty() {
        return Ok(Vec::new());
    }
    if !tree.span.contains(&span) {
        return Err(TreeError::SpanOutOfRange { span, tree: tree.span });
    }
    Ok(tree
        .leaves()
        .into_iter()
        .filter(|l| span.contains(&l.span))
        .filter_map(|l| l.token())
        .collect())
}

/// Tag test shared by the graph compiler: prefix match, case-sensitive.
pub fn is_noun_phrase(label: &str) -> bool {
    label.starts_with("NP")
}
