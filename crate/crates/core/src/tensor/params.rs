//! Named-parameter files: a versioned JSON document of tensors with shape
//! headers.

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

pub const PARAM_FILE_FORMAT: &str = "groundnet-params";
pub const PARAM_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: &Tensor) -> Self {
        NamedTensor { name: name.into(), shape: tensor.shape().to_vec(), data: tensor.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let t = Tensor::new(self.shape.clone(), self.data.clone())
            .map_err(|e| TensorError::ParamFile(format!("{}: {e}", self.name)))?;
        if !t.is_finite() {
            return Err(TensorError::ParamFile(format!("{}: non-finite value", self.name)));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedTensor>,
}

impl ParamFile {
    pub fn new(params: Vec<NamedTensor>) -> Self {
        ParamFile { format: PARAM_FILE_FORMAT.into(), version: PARAM_FILE_VERSION, params }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("param file serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: ParamFile =
            serde_json::from_str(text).map_err(|e| TensorError::ParamFile(e.to_string()))?;
        if file.format != PARAM_FILE_FORMAT || file.version != PARAM_FILE_VERSION {
            return Err(TensorError::ParamFile(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        for p in &file.params {
            p.to_tensor()?;
        }
        Ok(file)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.params.iter().find(|p| p.name == name)
    }
}
