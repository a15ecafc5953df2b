//! Parameter checkpoints: a JSON manifest plus a flat archive of row-major
//! little-endian `f64` tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spnet::{LossWeights, OrthogonalityMode, ScoreMode, SpNetParams, Weights};
use crate::tensor::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";
const FORMAT: &str = "domsel-spnet";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset in elements, not bytes.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Tokens in table-row order.
    pub vocab: Vec<String>,
    pub unk_buckets: usize,
    pub tau: f64,
    pub loss_weights: LossWeights,
    pub score_mode: ScoreMode,
    pub orthogonality: OrthogonalityMode,
}

/// Serializes parameters to a manifest and its tensor archive.
pub fn encode(params: &SpNetParams) -> (String, Vec<u8>) {
    let mut vocab: Vec<(&usize, &String)> = params.vocab.iter().map(|(t, r)| (r, t)).collect();
    vocab.sort();
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (name, m) in Weights::NAMES.iter().zip(params.weights.tensors()) {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            offset,
        });
        offset += m.len();
        for x in m.as_slice() {
            data.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64-le".into(),
        tensors,
        vocab: vocab.into_iter().map(|(_, t)| t.clone()).collect(),
        unk_buckets: params.unk_buckets,
        tau: params.tau,
        loss_weights: params.loss_weights,
        score_mode: params.score_mode,
        orthogonality: params.orthogonality,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    (json, data)
}

/// Parses a manifest and archive back into validated parameters.
pub fn decode(manifest: &str, data: &[u8]) -> Result<SpNetParams> {
    let manifest: Manifest = serde_json::from_str(manifest).map_err(|e| Error::Parse(format!("checkpoint manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f64-le" {
        return Err(Error::Parse(format!(
            "unsupported checkpoint {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }
    if !data.len().is_multiple_of(8) {
        return Err(Error::Parse(format!("tensor archive length {} is not a multiple of 8", data.len())));
    }
    let total = data.len() / 8;
    let mut found: BTreeMap<&str, Matrix> = BTreeMap::new();
    for entry in &manifest.tensors {
        let [rows, cols] = entry.shape;
        let end = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_add(entry.offset))
            .filter(|&end| end <= total)
            .ok_or_else(|| Error::Parse(format!("tensor {:?} runs past the archive", entry.name)))?;
        let values = data[entry.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if found.insert(entry.name.as_str(), Matrix::from_vec(rows, cols, values)).is_some() {
            return Err(Error::Parse(format!("tensor {:?} listed twice", entry.name)));
        }
    }
    let mut take = |name: &str| {
        found
            .remove(name)
            .ok_or_else(|| Error::Parse(format!("checkpoint lacks tensor {name:?}")))
    };
    let weights = Weights {
        table: take(Weights::NAMES[0])?,
        w_shared: take(Weights::NAMES[1])?,
        b_shared: take(Weights::NAMES[2])?,
        w_private: take(Weights::NAMES[3])?,
        b_private: take(Weights::NAMES[4])?,
    };
    if let Some(extra) = found.keys().next() {
        return Err(Error::Parse(format!("unknown tensor {extra:?}")));
    }
    let mut vocab = BTreeMap::new();
    for (row, token) in manifest.vocab.into_iter().enumerate() {
        if vocab.insert(token, row).is_some() {
            return Err(Error::Parse("duplicate vocabulary token".into()));
        }
    }
    let params = SpNetParams {
        vocab,
        unk_buckets: manifest.unk_buckets,
        weights,
        tau: manifest.tau,
        loss_weights: manifest.loss_weights,
        score_mode: manifest.score_mode,
        orthogonality: manifest.orthogonality,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &SpNetParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, data) = encode(params);
    let m = dir.join(MANIFEST_FILE);
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    let t = dir.join(TENSOR_FILE);
    fs::write(&t, data).map_err(|e| Error::io(&t, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<SpNetParams> {
    let dir = dir.as_ref();
    let m = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let t = dir.join(TENSOR_FILE);
    let data = fs::read(&t).map_err(|e| Error::io(&t, e))?;
    decode(&manifest, &data)
}
