//! JSON checkpoint: `{version, config, vocabulary, parameters}` where each
//! parameter is a nested array of 64-bit numbers keyed by its dotted name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::network::Model;
use super::params::Parameters;
use super::ModelConfig;
use crate::corpus::Vocabulary;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    parameters: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabulary: Vocabulary,
}

fn tensor_to_json(t: &ndarray::ArrayViewD<'_, f64>) -> Value {
    match t.ndim() {
        1 => Value::from(t.iter().copied().collect::<Vec<f64>>()),
        2 => Value::from(
            t.outer_iter()
                .map(|row| Value::from(row.iter().copied().collect::<Vec<f64>>()))
                .collect::<Vec<_>>(),
        ),
        n => unreachable!("{n}-d parameter"),
    }
}

fn json_numbers(value: &Value, shape: &[usize], name: &str, out: &mut Vec<f64>) -> Result<()> {
    let bad = || Error::Checkpoint(format!("parameter {name} has the wrong shape"));
    let items = value.as_array().ok_or_else(bad)?;
    if items.len() != shape[0] {
        return Err(bad());
    }
    for item in items {
        if shape.len() == 1 {
            out.push(item.as_f64().ok_or_else(bad)?);
        } else {
            json_numbers(item, &shape[1..], name, out)?;
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(model: Model, vocabulary: Vocabulary) -> Self {
        Checkpoint { model, vocabulary }
    }

    pub fn to_json(&self) -> Result<String> {
        let parameters = self
            .model
            .params
            .named()
            .iter()
            .map(|(n, t)| (n.clone(), tensor_to_json(t)))
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            vocabulary: self.vocabulary.clone(),
            parameters,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                file.version
            )));
        }
        file.config.validate()?;
        let mut params = Parameters::zeros(&file.config);
        let mut expected = 0;
        for (name, mut tensor) in params.named_mut() {
            expected += 1;
            let value = file
                .parameters
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let shape = tensor.shape().to_vec();
            let mut numbers = Vec::with_capacity(tensor.len());
            json_numbers(value, &shape, &name, &mut numbers)?;
            let loaded = ndarray::ArrayD::from_shape_vec(IxDyn(&shape), numbers)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensor.assign(&loaded);
        }
        if expected != file.parameters.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Checkpoint {
            model: Model::new(file.config, params)?,
            vocabulary: file.vocabulary,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
