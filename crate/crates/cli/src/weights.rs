//! Flat MLP weights as JSON with a layer-size header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use swap_core::ewr::WeightVector;
use swap_core::model::{param_count, Activation, TinyMlp};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<f64>,
}

impl WeightsFile {
    pub fn from_model(model: &TinyMlp) -> Self {
        Self {
            dims: model.dims().to_vec(),
            activation: model.activation(),
            weights: model.weights().as_slice().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<TinyMlp> {
        if self.dims.len() < 2 {
            return Err(CliError::Weights("dims needs input and output sizes".into()));
        }
        let expected = param_count(&self.dims);
        if expected != self.weights.len() {
            return Err(CliError::Weights(format!(
                "dims {:?} need {expected} weights, file has {}",
                self.dims,
                self.weights.len()
            )));
        }
        Ok(TinyMlp::new(self.dims, self.activation, WeightVector::from_vec(self.weights)?)?)
    }
}

pub fn write_weights(path: &Path, model: &TinyMlp) -> Result<()> {
    let text = serde_json::to_string_pretty(&WeightsFile::from_model(model))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_weights(path: &Path) -> Result<TinyMlp> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: WeightsFile = serde_json::from_str(&text)?;
    file.into_model()
}
