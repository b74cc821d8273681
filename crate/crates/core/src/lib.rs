//! Grounding referring expressions with neural module networks compiled
//! from constituency parses.
//!
//! The pipeline: read a bracketed parse ([`treebank`]), compile it into a
//! graph of `Locate` / `Relate` / `Intersect` nodes ([`compiler`]), run the
//! graph over the candidate boxes of a [`scene`] with the neural modules in
//! [`grounding`], and fit or score the model with [`training`]. [`synth`]
//! produces scenes whose expressions need relational reasoning, and
//! [`tensor`] holds the small reverse-mode autodiff engine underneath.

pub mod compiler;
pub mod grounding;
pub mod scene;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod treebank;
