#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use groundnet::compiler::{ComputationGraph, NodeKind};
use groundnet::grounding::{intersect, locate, relate, GroundNet, ModelConfig, Vocabulary};
use groundnet::scene::{BoundingBox, Scene, Split};

pub const SHAPES: [&str; 6] = ["ball", "cube", "cone", "ring", "star", "mug"];
pub const COLORS: [&str; 5] = ["red", "green", "blue", "yellow", "purple"];
pub const SIZES: [&str; 3] = ["big", "small", "tiny"];
pub const RELATIONS: [&str; 6] = [
    "(IN left) (IN of)",
    "(IN right) (IN of)",
    "(IN above)",
    "(IN below)",
    "(JJS nearest) (TO to)",
    "(IN on) (DT the) (JJ right) (NN side) (IN of)",
];

pub fn vocabulary() -> Vocabulary {
    let mut words: Vec<&str> = SHAPES.iter().chain(&COLORS).chain(&SIZES).copied().collect();
    words.extend(["left", "right", "above", "below", "nearest", "to", "on", "side"]);
    Vocabulary::from_words(words)
}

pub fn small_model(seed: u64, vis_dim: usize) -> GroundNet {
    let cfg = ModelConfig { hidden: 4, embed: 5, vis_dim, ..Default::default() };
    GroundNet::new(cfg, vocabulary(), seed)
}

fn simple_np(rng: &mut ChaCha8Rng) -> String {
    let mut parts = Vec::new();
    if rng.gen_bool(0.5) {
        parts.push(format!("(DT {})", ["the", "a", "this"].choose(rng).unwrap()));
    }
    if rng.gen_bool(0.3) {
        parts.push(format!("(JJ {})", SIZES.choose(rng).unwrap()));
    }
    if rng.gen_bool(0.6) {
        parts.push(format!("(JJ {})", COLORS.choose(rng).unwrap()));
    }
    parts.push(format!("(NN {})", SHAPES.choose(rng).unwrap()));
    format!("(NP {})", parts.join(" "))
}

fn np(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let inner = if depth == 0 || rng.gen_bool(0.3) {
        simple_np(rng)
    } else {
        let left = np(rng, depth - 1);
        let right = np(rng, depth - 1);
        if rng.gen_bool(0.15) {
            format!("(NP {left} {right})")
        } else {
            format!("(NP {left} (PP {} {right}))", RELATIONS.choose(rng).unwrap())
        }
    };
    match rng.gen_range(0..10) {
        0 => format!("(NP {inner})"),
        1 => format!("(NP (DT the) {inner})"),
        _ => inner,
    }
}

/// Bracketed noun phrase built from the referring-expression templates:
/// modifiers, relational PPs, adjacent NPs, determiners and unary wrappers.
pub fn random_tree(rng: &mut ChaCha8Rng, max_depth: usize) -> String {
    let body = np(rng, max_depth);
    if rng.gen_bool(0.1) {
        format!("(S {body})")
    } else {
        body
    }
}

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, vis_dim: usize) -> Scene {
    let boxes = (0..n)
        .map(|i| {
            let xmin = rng.gen_range(0.0..80.0);
            let ymin = rng.gen_range(0.0..80.0);
            BoundingBox {
                id: i as u32 * 2 + 5,
                xmin,
                ymin,
                xmax: xmin + rng.gen_range(2.0..20.0),
                ymax: ymin + rng.gen_range(2.0..20.0),
                features: (0..vis_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    Scene {
        id: 0,
        split: Split::Test,
        width: 100.0,
        height: 100.0,
        expression: vec!["ball".into()],
        parse: "(NP (NN ball))".into(),
        boxes,
        target: 5,
        supporting: BTreeSet::new(),
    }
}

pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Evaluates node `id` by calling the single-module entry points
/// recursively, without the graph executor.
pub fn compose(model: &GroundNet, graph: &ComputationGraph, scene: &Scene, id: usize) -> Vec<f64> {
    let node = graph.node(id);
    match node.kind {
        NodeKind::Locate => locate(model, &node.phrase, scene).unwrap(),
        NodeKind::Relate => {
            let input = compose(model, graph, scene, node.inputs[0]);
            relate(model, &node.phrase, scene, &input).unwrap()
        }
        NodeKind::Intersect => {
            let p = compose(model, graph, scene, node.inputs[0]);
            let q = compose(model, graph, scene, node.inputs[1]);
            intersect(&p, &q).unwrap()
        }
    }
}

/// Column-normalised relation matrix `s[i][j]` (output i, input j) from
/// plain loops over the stored parameters.
pub fn relation_oracle(model: &GroundNet, phrase: &[String], scene: &Scene) -> Vec<Vec<f64>> {
    let text = groundnet::grounding::attend(model, phrase).unwrap();
    let spat = scene.spatial_table().unwrap();
    let n = scene.boxes.len();
    let e = model.config.embed;
    let w = model.relate.projection.data();
    let ws = model.relate.score.data();
    let mut raw = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let pair: Vec<f64> = spat[i].iter().chain(spat[j].iter()).copied().collect();
            let z: Vec<f64> = (0..e)
                .map(|k| (0..10).map(|c| w[k * 10 + c] * pair[c]).sum::<f64>() * text[k])
                .collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-8;
            raw[i][j] = (0..e).map(|k| ws[k] * z[k] / norm).sum();
        }
    }
    let mut s = vec![vec![0.0; n]; n];
    for j in 0..n {
        let max = (0..n).map(|i| raw[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..n).map(|i| (raw[i][j] - max).exp()).sum();
        for (i, row) in s.iter_mut().enumerate() {
            row[j] = (raw[i][j] - max).exp() / total;
        }
    }
    s
}

pub fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}
