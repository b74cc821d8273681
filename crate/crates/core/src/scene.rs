//! Scenes: an image frame, candidate boxes with visual features, the
//! referring expression with its parse, and gold annotations.
//!
//! Datasets are JSON lines, one scene per line, each record tagged with the
//! schema version:
//!
//! ```text
//! {"version":1,"id":7,"split":"train","width":320.0,"height":320.0,
//!  "expression":["red","ball","left","of","blue","cube"],
//!  "parse":"(NP (NP (JJ red) (NN ball)) (PP (IN left) (IN of) (NP (JJ blue) (NN cube))))",
//!  "boxes":[{"id":0,"xmin":10.0,"ymin":12.0,"xmax":50.0,"ymax":49.0,"features":[...]}, ...],
//!  "target":0,"supporting":[3]}
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{read_ptb, ParseTree};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("record {record}: schema version {found}, expected {SCENE_SCHEMA_VERSION}")]
    SchemaVersionMismatch { record: usize, found: u32 },
    #[error("record {record}: {reason}")]
    InvariantViolation { record: usize, reason: String },
    #[error("record {record}: malformed JSON: {message}")]
    Malformed { record: usize, message: String },
    #[error("box {id} has zero width or height")]
    DegenerateBox { id: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub id: u32,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub features: Vec<f64>,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }
}

/// `[xmin/W, ymin/H, xmax/W, ymax/H, area/(W*H)]`.
pub fn spatial_features(
    b: &BoundingBox,
    image_w: f64,
    image_h: f64,
) -> Result<[f64; 5], SceneError> {
    if b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(SceneError::DegenerateBox { id: b.id });
    }
    let area = b.width() * b.height();
    Ok([b.xmin / image_w, b.ymin / image_h, b.xmax / image_w, b.ymax / image_h, area / (image_w * image_h)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub split: Split,
    pub width: f64,
    pub height: f64,
    pub expression: Vec<String>,
    pub parse: String,
    pub boxes: Vec<BoundingBox>,
    pub target: u32,
    pub supporting: BTreeSet<u32>,
}

impl Scene {
    pub fn box_index(&self, id: u32) -> Option<usize> {
        self.boxes.iter().position(|b| b.id == id)
    }

    pub fn target_index(&self) -> usize {
        self.box_index(self.target).expect("validated scene contains its target")
    }

    pub fn feature_len(&self) -> usize {
        self.boxes.first().map_or(0, |b| b.features.len())
    }

    pub fn parse_tree(&self) -> Result<ParseTree, crate::treebank::TreeError> {
        read_ptb(&self.parse)
    }

    /// Spatial features of every box, in box order.
    pub fn spatial_table(&self) -> Result<Vec<[f64; 5]>, SceneError> {
        self.boxes.iter().map(|b| spatial_features(b, self.width, self.height)).collect()
    }

    /// Checks every scene invariant; `record` labels the error.
    pub fn validate(&self, record: usize) -> Result<(), SceneError> {
        let fail = |reason: String| Err(SceneError::InvariantViolation { record, reason });
        if !(self.width > 0.0 && self.height > 0.0) {
            return fail(format!("image size {}x{} is not positive", self.width, self.height));
        }
        if self.boxes.is_empty() {
            return fail("scene has no boxes".into());
        }
        let dim = self.feature_len();
        let mut ids = BTreeSet::new();
        for b in &self.boxes {
            if !ids.insert(b.id) {
                return fail(format!("duplicate box id {}", b.id));
            }
            let coords = [b.xmin, b.ymin, b.xmax, b.ymax];
            if coords.iter().any(|c| !c.is_finite()) {
                return fail(format!("box {} has non-finite coordinates", b.id));
            }
            if b.xmin >= b.xmax || b.ymin >= b.ymax {
                return fail(format!("box {} has xmin >= xmax or ymin >= ymax", b.id));
            }
            if b.xmin < 0.0 || b.ymin < 0.0 || b.xmax > self.width || b.ymax > self.height {
                return fail(format!("box {} lies outside the image", b.id));
            }
            if b.features.len() != dim || dim == 0 {
                return fail(format!("box {} has {} features, expected {}", b.id, b.features.len(), dim));
            }
            if b.features.iter().any(|f| !f.is_finite()) {
                return fail(format!("box {} has non-finite features", b.id));
            }
        }
        if !ids.contains(&self.target) {
            return fail(format!("target {} is not a box", self.target));
        }
        if self.supporting.contains(&self.target) {
            return fail("supporting set contains the target".into());
        }
        if let Some(missing) = self.supporting.iter().find(|s| !ids.contains(s)) {
            return fail(format!("supporting id {missing} is not a box"));
        }
        match self.parse_tree() {
            Ok(tree) => {
                if tree.tokens() != self.expression.iter().map(String::as_str).collect::<Vec<_>>() {
                    return fail("parse yield differs from the expression".into());
                }
            }
            Err(e) => return fail(format!("parse: {e}")),
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RecordRef<'a> {
    version: u32,
    #[serde(flatten)]
    scene: &'a Scene,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

pub fn scene_to_line(scene: &Scene) -> String {
    serde_json::to_string(&RecordRef { version: SCENE_SCHEMA_VERSION, scene }).expect("scene serializes")
}

pub fn scene_from_line(line: &str, record: usize) -> Result<Scene, SceneError> {
    let malformed = |e: serde_json::Error| SceneError::Malformed { record, message: e.to_string() };
    let probe: VersionProbe = serde_json::from_str(line).map_err(malformed)?;
    if probe.version != SCENE_SCHEMA_VERSION {
        return Err(SceneError::SchemaVersionMismatch { record, found: probe.version });
    }
    let scene: Scene = serde_json::from_str(line).map_err(malformed)?;
    scene.validate(record)?;
    Ok(scene)
}

/// Reads JSON-lines text; blank lines are skipped and do not count as records.
pub fn parse_dataset(text: &str) -> Result<Vec<Scene>, SceneError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| scene_from_line(line, i))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scene>, SceneError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut scenes = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(scene_from_line(&line, scenes.len())?);
    }
    Ok(scenes)
}

pub fn save_dataset(scenes: &[Scene], path: impl AsRef<Path>) -> Result<(), SceneError> {
    for (i, s) in scenes.iter().enumerate() {
        s.validate(i)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for s in scenes {
        writeln!(out, "{}", scene_to_line(s))?;
    }
    out.flush()?;
    Ok(())
}
