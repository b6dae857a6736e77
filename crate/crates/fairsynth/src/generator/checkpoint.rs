//! JSON checkpoints holding the generator config, vocabulary hash, named
//! parameter arrays, and the sampling bootstrap pool. Floats round-trip
//! exactly through the JSON encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GeneratorConfig, GeneratorModel};

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: GeneratorConfig,
    vocab_hash: String,
    c_total: usize,
    params: BTreeMap<String, ParamBlob>,
    row0_pool: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(model: &GeneratorModel, path: &Path) -> Result<()> {
    let params: BTreeMap<String, ParamBlob> = model
        .named_params()
        .into_iter()
        .map(|(name, p)| {
            let v = p.value();
            let blob = ParamBlob {
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().cloned().collect(),
            };
            (name, blob)
        })
        .collect();
    let file = CheckpointFile {
        config: model.config.clone(),
        vocab_hash: model.vocab_hash.clone(),
        c_total: model.c_total,
        params,
        row0_pool: model
            .row0_pool
            .iter()
            .map(|(g, s)| (g.clone(), s.iter().cloned().collect()))
            .collect(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GeneratorModel> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
    file.config.validate()?;
    if file.c_total < 2 {
        return Err(Error::Checkpoint("vocabulary size below two".into()));
    }
    let mut model =
        GeneratorModel::with_dimensions(file.vocab_hash, file.c_total, file.config);
    for (name, p) in model.named_params() {
        let blob = file
            .params
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        if p.shape() != (blob.rows, blob.cols) || blob.data.len() != blob.rows * blob.cols {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has shape {}x{} with {} values, expected {:?}",
                blob.rows,
                blob.cols,
                blob.data.len(),
                p.shape()
            )));
        }
        p.update_value(|v| {
            for (dst, src) in v.iter_mut().zip(&blob.data) {
                *dst = *src;
            }
        });
    }
    model.row0_pool = file
        .row0_pool
        .into_iter()
        .map(|(g, s)| {
            let set: BTreeSet<usize> = s.into_iter().collect();
            if let Some(&max) = set.iter().next_back() {
                if max >= model.c_total {
                    return Err(Error::Checkpoint(format!(
                        "bootstrap pool index {max} outside the vocabulary"
                    )));
                }
            }
            Ok((g, set))
        })
        .collect::<Result<_>>()?;
    Ok(model)
}
