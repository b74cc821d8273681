//! Synthetic scenes of coloured shapes on a grid, with templated
//! referring expressions whose referent is checked by a symbolic
//! evaluator.
//!
//! Every scene is drawn from its own RNG stream `(seed, scene id)`, so a
//! dataset is reproducible and can be generated in parallel.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{BoundingBox, Scene, SceneError, Split};
use crate::tensor::stream_rng;
use crate::treebank::ParseTree;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("no uniquely grounded expression after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("expression matches {count} objects")]
    NotUnique { count: usize },
    #[error("expression matches no object")]
    Unsatisfiable,
    #[error("parse is not a generated template: {0}")]
    Template(String),
    #[error("world spec: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

type Result<T> = std::result::Result<T, SynthError>;

/// Spatial predicates over box centres, in image coordinates (y grows
/// downwards).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "left of")]
    LeftOf,
    #[serde(rename = "right of")]
    RightOf,
    #[serde(rename = "above")]
    Above,
    #[serde(rename = "below")]
    Below,
    #[serde(rename = "nearest")]
    Nearest,
}

impl Relation {
    pub const ALL: [Relation; 5] =
        [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below, Relation::Nearest];

    /// `(tag, word)` leaves of the relation inside its PP.
    pub fn leaves(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Relation::LeftOf => &[("JJ", "left"), ("IN", "of")],
            Relation::RightOf => &[("JJ", "right"), ("IN", "of")],
            Relation::Above => &[("IN", "above")],
            Relation::Below => &[("IN", "below")],
            Relation::Nearest => &[("JJS", "nearest")],
        }
    }

    fn from_words(words: &[&str]) -> Option<Relation> {
        Relation::ALL
            .into_iter()
            .find(|r| r.leaves().iter().map(|(_, w)| *w).eq(words.iter().copied()))
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> = self.leaves().iter().map(|(_, w)| *w).collect();
        f.write_str(&words.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Split of scene `id`: ids are partitioned into contiguous train,
    /// val and test ranges.
    pub fn split_of(&self, id: usize) -> Split {
        if id < self.train {
            Split::Train
        } else if id < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Generator configuration, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    pub relations: Vec<Relation>,
    /// Grid columns and rows; at most one object per cell.
    pub grid: [usize; 2],
    /// Cell side in pixels.
    pub cell: f64,
    /// Inclusive range of objects per scene.
    pub boxes: [usize; 2],
    /// Deepest nesting of noun phrases in an expression.
    pub max_depth: usize,
    /// Standard deviation of the Gaussian noise added to visual features.
    pub noise: f64,
    /// Smallest centre offset, in cells, that a relation may rely on.
    pub margin: f64,
    /// Layouts tried per scene before giving up.
    pub retries: usize,
    pub seed: u64,
    pub split: SplitCounts,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        WorldSpec {
            shapes: words(&["ball", "cube", "cone", "ring", "star"]),
            colors: words(&["red", "green", "blue", "yellow", "purple"]),
            relations: Relation::ALL.to_vec(),
            grid: [6, 6],
            cell: 40.0,
            boxes: [4, 7],
            max_depth: 3,
            noise: 0.05,
            margin: 0.25,
            retries: 200,
            seed: 0,
            split: SplitCounts { train: 9000, val: 250, test: 750 },
        }
    }
}

impl WorldSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: WorldSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        WorldSpec::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world spec serialises")
    }

    /// Length of the visual feature vector: one-hot shape then colour.
    pub fn vis_dim(&self) -> usize {
        self.shapes.len() + self.colors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.shapes.is_empty() || self.colors.is_empty() {
            return bad("shape and colour vocabularies must be non-empty".into());
        }
        let mut seen = BTreeSet::new();
        for w in self.shapes.iter().chain(&self.colors) {
            if w.is_empty() || w.contains(|c: char| c.is_whitespace() || c == '(' || c == ')') {
                return bad(format!("{w:?} is not a single token"));
            }
            if !seen.insert(w.as_str()) {
                return bad(format!("{w:?} appears twice"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if !(self.cell > 0.0 && self.cell.is_finite()) || !(self.margin >= 0.0 && self.margin < 1.0) {
            return bad("cell must be positive and margin in [0, 1)".into());
        }
        let [lo, hi] = self.boxes;
        if lo == 0 || lo > hi || hi > self.grid[0] * self.grid[1] {
            return bad(format!("box range {lo}..={hi} does not fit a {}x{} grid", self.grid[0], self.grid[1]));
        }
        if self.max_depth == 0 || self.retries == 0 {
            return bad("max_depth and retries must be positive".into());
        }
        if self.max_depth > 1 && self.relations.is_empty() {
            return bad("nested expressions need at least one relation".into());
        }
        Ok(())
    }
}

/// A scene object with its symbolic attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub shape: String,
    pub color: String,
    pub bbox: BoundingBox,
}

impl Object {
    fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }

    fn matches(&self, np: &NounPhrase) -> bool {
        self.shape == np.shape && np.color.as_ref().is_none_or(|c| *c == self.color)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounPhrase {
    pub color: Option<String>,
    pub shape: String,
}

impl NounPhrase {
    pub fn new(color: &str, shape: &str) -> Self {
        NounPhrase { color: Some(color.to_string()), shape: shape.to_string() }
    }

    fn of(object: &Object) -> Self {
        NounPhrase::new(&object.color, &object.shape)
    }

    fn write_ptb(&self, out: &mut String) {
        out.push_str("(NP ");
        if let Some(c) = &self.color {
            out.push_str(&format!("(JJ {c}) "));
        }
        out.push_str(&format!("(NN {}))", self.shape));
    }
}

/// Templated referring expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Description {
    Simple(NounPhrase),
    Related { head: NounPhrase, relation: Relation, anchor: Box<Description> },
}

impl Description {
    /// Number of noun phrases on the nesting chain.
    pub fn depth(&self) -> usize {
        match self {
            Description::Simple(_) => 1,
            Description::Related { anchor, .. } => 1 + anchor.depth(),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut node = self;
        loop {
            let head = match node {
                Description::Simple(np) => np,
                Description::Related { head, .. } => head,
            };
            out.extend(head.color.iter().cloned());
            out.push(head.shape.clone());
            match node {
                Description::Simple(_) => return out,
                Description::Related { relation, anchor, .. } => {
                    out.extend(relation.leaves().iter().map(|(_, w)| w.to_string()));
                    node = anchor;
                }
            }
        }
    }

    pub fn to_ptb(&self) -> String {
        let mut out = String::new();
        self.write_ptb(&mut out);
        out
    }

    fn write_ptb(&self, out: &mut String) {
        match self {
            Description::Simple(np) => np.write_ptb(out),
            Description::Related { head, relation, anchor } => {
                out.push_str("(NP ");
                head.write_ptb(out);
                out.push_str(" (PP");
                for (tag, word) in relation.leaves() {
                    out.push_str(&format!(" ({tag} {word})"));
                }
                out.push(' ');
                anchor.write_ptb(out);
                out.push_str("))");
            }
        }
    }

    /// Reads back a tree produced by [`Description::to_ptb`].
    pub fn from_tree(tree: &ParseTree) -> Result<Self> {
        let fail = || SynthError::Template(tree.write_ptb());
        if tree.label() != "NP" || tree.is_leaf() {
            return Err(fail());
        }
        let kids = tree.children();
        if kids.iter().all(ParseTree::is_leaf) {
            return match kids {
                [shape] if shape.label() == "NN" => Ok(Description::Simple(NounPhrase {
                    color: None,
                    shape: shape.token().unwrap_or_default().to_string(),
                })),
                [color, shape] if color.label() == "JJ" && shape.label() == "NN" => Ok(Description::Simple(
                    NounPhrase::new(color.token().unwrap_or_default(), shape.token().unwrap_or_default()),
                )),
                _ => Err(fail()),
            };
        }
        let [head, pp] = kids else { return Err(fail()) };
        let Description::Simple(head) = Description::from_tree(head)? else { return Err(fail()) };
        let [rel @ .., anchor] = pp.children() else { return Err(fail()) };
        if pp.label() != "PP" || !rel.iter().all(ParseTree::is_leaf) {
            return Err(fail());
        }
        let words: Vec<&str> = rel.iter().filter_map(ParseTree::token).collect();
        let relation = Relation::from_words(&words).ok_or_else(fail)?;
        Ok(Description::Related { head, relation, anchor: Box::new(Description::from_tree(anchor)?) })
    }
}

/// Gold referent and supporting objects of an expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Referents {
    pub target: u32,
    pub supporting: BTreeSet<u32>,
}

fn holds(relation: Relation, subject: &Object, anchor: &Object) -> bool {
    let ((sx, sy), (ax, ay)) = (subject.center(), anchor.center());
    match relation {
        Relation::LeftOf => sx < ax,
        Relation::RightOf => sx > ax,
        Relation::Above => sy < ay,
        Relation::Below => sy > ay,
        Relation::Nearest => unreachable!("nearest is superlative"),
    }
}

fn distance(a: &Object, b: &Object) -> f64 {
    let ((ax, ay), (bx, by)) = (a.center(), b.center());
    (ax - bx).hypot(ay - by)
}

/// Objects denoted by `desc`; embedded noun phrases must each denote
/// exactly one object, which is recorded in `supporting`.
fn denote(desc: &Description, objects: &[Object], supporting: &mut BTreeSet<u32>) -> Result<Vec<usize>> {
    match desc {
        Description::Simple(np) => Ok((0..objects.len()).filter(|&i| objects[i].matches(np)).collect()),
        Description::Related { head, relation, anchor } => {
            let a = unique(denote(anchor, objects, supporting)?)?;
            supporting.insert(objects[a].bbox.id);
            let heads: Vec<usize> = (0..objects.len()).filter(|&i| i != a && objects[i].matches(head)).collect();
            if *relation != Relation::Nearest {
                return Ok(heads.into_iter().filter(|&i| holds(*relation, &objects[i], &objects[a])).collect());
            }
            let best = heads.iter().map(|&i| distance(&objects[i], &objects[a])).fold(f64::INFINITY, f64::min);
            Ok(heads.into_iter().filter(|&i| distance(&objects[i], &objects[a]) == best).collect())
        }
    }
}

fn unique(set: Vec<usize>) -> Result<usize> {
    match set[..] {
        [one] => Ok(one),
        [] => Err(SynthError::Unsatisfiable),
        _ => Err(SynthError::NotUnique { count: set.len() }),
    }
}

/// Exact symbolic grounding: "left of" compares centre x, "above" centre
/// y, and "X nearest Y" picks the X (other than Y) closest to Y.
pub fn logical_ground(desc: &Description, objects: &[Object]) -> Result<Referents> {
    let mut supporting = BTreeSet::new();
    let target = unique(denote(desc, objects, &mut supporting)?)?;
    Ok(Referents { target: objects[target].bbox.id, supporting })
}

/// Whether `relation` separates the anchor's candidate subjects by at
/// least `margin` pixels, so the answer does not hinge on jitter.
fn clear_margin(relation: Relation, head: &NounPhrase, anchor: usize, objects: &[Object], margin: f64) -> bool {
    let (ax, ay) = objects[anchor].center();
    let candidates = (0..objects.len()).filter(|&i| i != anchor && objects[i].matches(head));
    match relation {
        Relation::LeftOf | Relation::RightOf => candidates.into_iter().all(|i| (objects[i].center().0 - ax).abs() >= margin),
        Relation::Above | Relation::Below => candidates.into_iter().all(|i| (objects[i].center().1 - ay).abs() >= margin),
        Relation::Nearest => {
            let mut d: Vec<f64> = candidates.map(|i| distance(&objects[i], &objects[anchor])).collect();
            d.sort_by(f64::total_cmp);
            d.len() < 2 || d[1] - d[0] >= margin
        }
    }
}

/// A generated scene with the symbolic state behind it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub scene: Scene,
    pub objects: Vec<Object>,
    pub description: Description,
}

fn place_objects<R: Rng + ?Sized>(spec: &WorldSpec, rng: &mut R) -> Vec<Object> {
    let n = rng.gen_range(spec.boxes[0]..=spec.boxes[1]);
    let mut cells: Vec<usize> = (0..spec.grid[0] * spec.grid[1]).collect();
    cells.shuffle(rng);
    cells[..n]
        .iter()
        .enumerate()
        .map(|(k, &cell)| {
            let (col, row) = ((cell % spec.grid[0]) as f64, (cell / spec.grid[0]) as f64);
            let w = spec.cell * rng.gen_range(0.4..0.9);
            let h = spec.cell * rng.gen_range(0.4..0.9);
            let xmin = col * spec.cell + rng.gen_range(0.0..spec.cell - w);
            let ymin = row * spec.cell + rng.gen_range(0.0..spec.cell - h);
            Object {
                shape: spec.shapes.choose(rng).expect("non-empty").clone(),
                color: spec.colors.choose(rng).expect("non-empty").clone(),
                bbox: BoundingBox { id: k as u32 + 1, xmin, ymin, xmax: xmin + w, ymax: ymin + h, features: Vec::new() },
            }
        })
        .collect()
}

/// One layout attempt: a chain `target, anchor, anchor's anchor, ...`,
/// where every object but the innermost gets a look-alike so only the
/// relation can tell them apart.
fn try_describe<R: Rng + ?Sized>(spec: &WorldSpec, objects: &mut [Object], rng: &mut R) -> Option<Description> {
    let n = objects.len();
    let depth = rng.gen_range(1..=spec.max_depth).min(n.div_ceil(2));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (chain, rest) = order.split_at(depth);
    for (k, &twin) in rest.iter().take(depth - 1).enumerate() {
        let (shape, color) = (objects[chain[k]].shape.clone(), objects[chain[k]].color.clone());
        objects[twin].shape = shape;
        objects[twin].color = color;
    }
    let innermost = chain[depth - 1];
    let mut desc = Description::Simple(NounPhrase::of(&objects[innermost]));
    if logical_ground(&desc, objects).ok()?.target != objects[innermost].bbox.id {
        return None;
    }
    let margin = spec.margin * spec.cell;
    for k in (0..depth - 1).rev() {
        let head = NounPhrase::of(&objects[chain[k]]);
        let mut relations = spec.relations.clone();
        relations.shuffle(rng);
        desc = relations.into_iter().find_map(|relation| {
            let candidate = Description::Related { head: head.clone(), relation, anchor: Box::new(desc.clone()) };
            let ok = logical_ground(&candidate, objects).is_ok_and(|r| r.target == objects[chain[k]].bbox.id)
                && clear_margin(relation, &head, chain[k + 1], objects, margin);
            ok.then_some(candidate)
        })?;
    }
    Some(desc)
}

fn render_features<R: Rng + ?Sized>(spec: &WorldSpec, objects: &mut [Object], rng: &mut R) {
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    for o in objects {
        let mut f = vec![0.0; spec.vis_dim()];
        f[spec.shapes.iter().position(|s| *s == o.shape).expect("shape in vocabulary")] = 1.0;
        f[spec.shapes.len() + spec.colors.iter().position(|c| *c == o.color).expect("colour in vocabulary")] = 1.0;
        for v in &mut f {
            *v += noise.sample(rng);
        }
        o.bbox.features = f;
    }
}

/// Draws one scene with a uniquely grounded expression. The returned
/// scene has id 0 and the train split; callers relabel it.
pub fn gen_scene<R: Rng + ?Sized>(spec: &WorldSpec, rng: &mut R) -> Result<Generated> {
    spec.validate()?;
    for _ in 0..spec.retries {
        let mut objects = place_objects(spec, rng);
        let Some(description) = try_describe(spec, &mut objects, rng) else { continue };
        let referents = logical_ground(&description, &objects)?;
        render_features(spec, &mut objects, rng);
        let scene = Scene {
            id: 0,
            split: Split::Train,
            width: spec.grid[0] as f64 * spec.cell,
            height: spec.grid[1] as f64 * spec.cell,
            expression: description.tokens(),
            parse: description.to_ptb(),
            boxes: objects.iter().map(|o| o.bbox.clone()).collect(),
            target: referents.target,
            supporting: referents.supporting,
        };
        scene.validate(0)?;
        return Ok(Generated { scene, objects, description });
    }
    Err(SynthError::GenerationExhausted { attempts: spec.retries })
}

/// Scene `id` of the dataset described by `spec`.
pub fn gen_dataset_scene(spec: &WorldSpec, id: usize) -> Result<Generated> {
    let mut generated = gen_scene(spec, &mut stream_rng(spec.seed, id as u64))?;
    generated.scene.id = id as u64;
    generated.scene.split = spec.split.split_of(id);
    Ok(generated)
}

/// All `spec.split.total()` scenes, generated in parallel.
pub fn generate_dataset(spec: &WorldSpec) -> Result<Vec<Scene>> {
    spec.validate()?;
    (0..spec.split.total())
        .into_par_iter()
        .map(|id| gen_dataset_scene(spec, id).map(|g| g.scene))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::compiler::{generate_computation_graph, Lexicon, NodeKind};
    use crate::treebank::read_ptb;

    fn obj(id: u32, color: &str, shape: &str, x: f64, y: f64) -> Object {
        Object {
            shape: shape.into(),
            color: color.into(),
            bbox: BoundingBox { id, xmin: x, ymin: y, xmax: x + 10.0, ymax: y + 10.0, features: vec![] },
        }
    }

    fn parse(text: &str) -> Description {
        Description::from_tree(&read_ptb(text).unwrap()).unwrap()
    }

    fn small_spec() -> WorldSpec {
        WorldSpec { split: SplitCounts { train: 30, val: 5, test: 5 }, ..WorldSpec::default() }
    }

    #[test]
    fn single_object_world() {
        let spec = WorldSpec {
            shapes: vec!["s".into()],
            colors: vec!["c".into()],
            boxes: [1, 1],
            ..WorldSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = gen_scene(&spec, &mut rng).unwrap();
        assert_eq!(g.scene.parse, "(NP (JJ c) (NN s))");
        assert_eq!(g.scene.expression, vec!["c", "s"]);
        assert!(g.scene.supporting.is_empty());
        assert_eq!(g.scene.target, g.scene.boxes[0].id);
    }

    #[test]
    fn impossible_world_is_exhausted() {
        let spec = WorldSpec {
            shapes: vec!["s".into()],
            colors: vec!["c".into()],
            boxes: [2, 2],
            retries: 5,
            ..WorldSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(gen_scene(&spec, &mut rng), Err(SynthError::GenerationExhausted { attempts: 5 })));
    }

    #[test]
    fn simple_reference() {
        let objects = [obj(1, "red", "ball", 0.0, 0.0), obj(2, "blue", "ball", 50.0, 0.0)];
        let r = logical_ground(&parse("(NP (JJ red) (NN ball))"), &objects).unwrap();
        assert_eq!(r, Referents { target: 1, supporting: BTreeSet::new() });
        assert!(matches!(
            logical_ground(&parse("(NP (NN ball))"), &objects),
            Err(SynthError::NotUnique { count: 2 })
        ));
        assert!(matches!(logical_ground(&parse("(NP (NN cube))"), &objects), Err(SynthError::Unsatisfiable)));
    }

    #[test]
    fn ball_left_of_cube() {
        let objects =
            [obj(1, "red", "ball", 80.0, 0.0), obj(2, "red", "cube", 40.0, 0.0), obj(3, "red", "ball", 0.0, 30.0)];
        let d = parse("(NP (NP (NN ball)) (PP (JJ left) (IN of) (NP (NN cube))))");
        let r = logical_ground(&d, &objects).unwrap();
        assert_eq!(r.target, 3);
        assert_eq!(r.supporting, BTreeSet::from([2]));
    }

    #[test]
    fn nearest_excludes_anchor() {
        let objects = [
            obj(1, "red", "ball", 0.0, 0.0),
            obj(2, "red", "ball", 30.0, 0.0),
            obj(3, "red", "ball", 100.0, 0.0),
        ];
        let d = parse("(NP (NP (NN ball)) (PP (JJS nearest) (NP (NN ball))))");
        assert!(matches!(logical_ground(&d, &objects), Err(SynthError::NotUnique { count: 3 })));
        let objects = [obj(1, "red", "ball", 0.0, 0.0), obj(2, "blue", "ball", 30.0, 0.0), obj(3, "red", "ball", 100.0, 0.0)];
        let d = parse("(NP (NP (JJ red) (NN ball)) (PP (JJS nearest) (NP (JJ blue) (NN ball))))");
        assert_eq!(logical_ground(&d, &objects).unwrap().target, 1);
    }

    #[test]
    fn ambiguous_anchor_is_not_unique() {
        let objects = [obj(1, "red", "ball", 0.0, 0.0), obj(2, "red", "cube", 40.0, 0.0), obj(3, "red", "cube", 90.0, 0.0)];
        let d = parse("(NP (NP (NN ball)) (PP (JJ left) (IN of) (NP (NN cube))))");
        assert!(matches!(logical_ground(&d, &objects), Err(SynthError::NotUnique { count: 2 })));
    }

    #[test]
    fn template_round_trip() {
        let text = "(NP (NP (JJ red) (NN ball)) (PP (JJ left) (IN of) (NP (NP (JJ blue) (NN cube)) \
                    (PP (IN above) (NP (JJ green) (NN cone))))))";
        let d = parse(text);
        assert_eq!(d.depth(), 3);
        assert_eq!(read_ptb(&d.to_ptb()).unwrap(), read_ptb(text).unwrap());
        assert_eq!(d.tokens().join(" "), "red ball left of blue cube above green cone");
        assert!(Description::from_tree(&read_ptb("(NP (NP (NN a)) (PP (IN under) (NP (NN b))))").unwrap()).is_err());
        assert!(Description::from_tree(&read_ptb("(S (NN a))").unwrap()).is_err());
    }

    #[test]
    fn depth_two_compiles_to_four_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = WorldSpec { max_depth: 2, ..WorldSpec::default() };
        let mut seen = 0;
        for _ in 0..200 {
            let g = gen_scene(&spec, &mut rng).unwrap();
            if g.description.depth() != 2 {
                continue;
            }
            seen += 1;
            let graph = generate_computation_graph(&g.scene.parse_tree().unwrap(), &Lexicon::default()).unwrap();
            let count = |k| graph.nodes.iter().filter(|n| n.kind == k).count();
            assert_eq!((count(NodeKind::Locate), count(NodeKind::Relate), count(NodeKind::Intersect)), (2, 1, 1));
            assert_eq!(g.scene.supporting.len(), 1);
        }
        assert!(seen > 50);
    }

    /// Re-checks the returned ids against the predicates directly.
    fn replay(desc: &Description, objects: &[Object], id: u32) {
        let find = |id: u32| objects.iter().find(|o| o.bbox.id == id).unwrap();
        let target = find(id);
        match desc {
            Description::Simple(np) => assert!(target.matches(np)),
            Description::Related { head, relation, anchor } => {
                assert!(target.matches(head));
                let a = logical_ground(anchor, objects).unwrap().target;
                assert_ne!(a, id);
                let anchor_obj = find(a);
                if *relation == Relation::Nearest {
                    let d = distance(target, anchor_obj);
                    for o in objects.iter().filter(|o| o.bbox.id != a && o.matches(head)) {
                        assert!(distance(o, anchor_obj) >= d);
                    }
                } else {
                    assert!(holds(*relation, target, anchor_obj));
                }
                replay(anchor, objects, a);
            }
        }
    }

    #[test]
    fn generated_scenes_replay() {
        let spec = small_spec();
        for id in 0..300 {
            let g = gen_dataset_scene(&spec, id).unwrap();
            replay(&g.description, &g.objects, g.scene.target);
            assert_eq!(Description::from_tree(&g.scene.parse_tree().unwrap()).unwrap(), g.description);
            assert!(!g.scene.supporting.contains(&g.scene.target));
            assert_eq!(g.scene.supporting.len(), g.description.depth() - 1);
            let n = g.scene.boxes.len();
            assert!((4..=7).contains(&n));
        }
    }

    #[test]
    fn ten_thousand_scenes_are_unique() {
        let spec = WorldSpec { split: SplitCounts { train: 10_000, val: 0, test: 0 }, ..WorldSpec::default() };
        let scenes = generate_dataset(&spec).unwrap();
        assert_eq!(scenes.len(), 10_000);
        let mut failures = 0;
        for (id, scene) in scenes.iter().enumerate() {
            let g = gen_dataset_scene(&spec, id).unwrap();
            let desc = Description::from_tree(&scene.parse_tree().unwrap()).unwrap();
            match logical_ground(&desc, &g.objects) {
                Ok(r) if r.target == scene.target && r.supporting == scene.supporting => {}
                _ => failures += 1,
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn dataset_is_deterministic_and_split() {
        let spec = small_spec();
        let a = generate_dataset(&spec).unwrap();
        assert_eq!(a, generate_dataset(&spec).unwrap());
        let splits: Vec<Split> = a.iter().map(|s| s.split).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 30);
        assert_eq!(splits[30..35], [Split::Val; 5]);
        assert_eq!(splits[35..], [Split::Test; 5]);
        let other = generate_dataset(&WorldSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn features_are_noisy_one_hot() {
        let spec = WorldSpec { noise: 0.0, ..small_spec() };
        let g = gen_dataset_scene(&spec, 0).unwrap();
        for o in &g.objects {
            let f = &o.bbox.features;
            assert_eq!(f.len(), 10);
            assert_eq!(f.iter().sum::<f64>(), 2.0);
            assert_eq!(f[spec.shapes.iter().position(|s| *s == o.shape).unwrap()], 1.0);
        }
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = small_spec();
        assert_eq!(WorldSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let partial = WorldSpec::from_toml("seed = 9\nboxes = [2, 3]\n").unwrap();
        assert_eq!((partial.seed, partial.boxes), (9, [2, 3]));
        assert!(WorldSpec::from_toml("noise = -1.0").is_err());
        assert!(WorldSpec::from_toml("shapes = []").is_err());
        assert!(WorldSpec::from_toml("colour = 3").is_err());
    }
}
