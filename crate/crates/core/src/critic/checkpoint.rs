use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CriticModel, Hyper, Vocab};
use super::train::Objective;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: u64 = 1;
const KIND: &str = "phrase-critic";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: u64,
    kind: String,
    objective: Objective,
    hyper: Hyper,
    vocab: Vec<String>,
    feature_dim: usize,
    tensors: Vec<Tensor>,
}

pub fn checkpoint_to_json(model: &CriticModel, objective: Objective) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT,
        kind: KIND.into(),
        objective,
        hyper: model.hyper,
        vocab: model.vocab.tokens().to_vec(),
        feature_dim: model.feature_dim,
        tensors: model
            .tensors()
            .into_iter()
            .map(|(name, shape, range)| Tensor {
                name: name.into(),
                shape,
                data: model.params[range].to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint",
        message: message.into(),
    }
}

pub fn checkpoint_from_json(text: &str) -> Result<(CriticModel, Objective)> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_u64()) {
        Some(CHECKPOINT_FORMAT) => {}
        Some(found) => {
            return Err(Error::Version {
                what: "checkpoint",
                found,
                expected: CHECKPOINT_FORMAT,
            })
        }
        None => return Err(corrupt("missing numeric \"format\" field")),
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    if file.kind != KIND {
        return Err(corrupt(format!("kind is \"{}\", expected \"{KIND}\"", file.kind)));
    }
    let vocab = Vocab::new(&file.vocab);
    if vocab.tokens() != file.vocab.as_slice() {
        return Err(corrupt("vocabulary is not in canonical order"));
    }
    let mut model = CriticModel::zeros(file.hyper, vocab, file.feature_dim)?;
    let expected = model.tensors();
    if expected.len() != file.tensors.len() {
        return Err(corrupt(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    for ((name, shape, range), t) in expected.into_iter().zip(file.tensors) {
        if t.name != name || t.shape != shape || t.data.len() != range.len() {
            return Err(corrupt(format!(
                "tensor \"{}\" {:?} with {} values does not match \"{name}\" {shape:?}",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        if t.data.iter().any(|x| !x.is_finite()) {
            return Err(corrupt(format!("tensor \"{name}\" has non-finite values")));
        }
        model.params[range].copy_from_slice(&t.data);
    }
    Ok((model, file.objective))
}

pub fn save_checkpoint(model: &CriticModel, objective: Objective, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(model, objective)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CriticModel, Objective)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.into())),
        Err(e) => return Err(e.into()),
    };
    checkpoint_from_json(&text)
}
