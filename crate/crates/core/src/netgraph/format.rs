//! On-disk formats: a JSON manifest plus a little-endian binary sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, LayerGraph, LayerSpec, NetError, Split};
use crate::tensorcore::{Precision, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "vizaudit-model";
const DATASET_FORMAT: &str = "vizaudit-dataset";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    precision: Precision,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    version: u32,
    input_shape: [usize; 3],
    output: String,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    weights: String,
    weights_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    version: u32,
    split: Split,
    classes: usize,
    image: TensorEntry,
    labels: Vec<usize>,
    data: String,
    data_sha256: String,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

fn encode(t: &Tensor, out: &mut Vec<u8>) {
    match t.precision() {
        Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Precision::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
}

fn decode(entry: &TensorEntry, blob: &[u8]) -> Result<Tensor, NetError> {
    let width = entry.precision.byte_width();
    let count: usize = entry.shape.iter().product();
    if entry.bytes != count * width {
        return Err(NetError::Manifest(format!(
            "tensor `{}` declares {} bytes for shape {:?}",
            entry.name, entry.bytes, entry.shape
        )));
    }
    let end = entry.offset + entry.bytes;
    let raw = blob.get(entry.offset..end).ok_or(NetError::Truncated {
        needed: end,
        found: blob.len(),
    })?;
    let data: Vec<f64> = match entry.precision {
        Precision::F64 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        Precision::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    Ok(Tensor::new(entry.shape.clone(), data)?.with_precision(entry.precision))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn params_blob(graph: &LayerGraph) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in graph.params() {
        let offset = blob.len();
        encode(t, &mut blob);
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            precision: t.precision(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    (entries, blob)
}

/// SHA-256 of the serialized parameters.
pub fn weights_digest(graph: &LayerGraph) -> String {
    sha256_hex(&params_blob(graph).1)
}

/// Writes `path` (manifest) and a `.bin` sidecar next to it.
pub fn save_model(graph: &LayerGraph, path: &Path) -> Result<(), NetError> {
    let (tensors, blob) = params_blob(graph);
    let bin = sidecar(path);
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        input_shape: graph.input_shape(),
        output: graph.output().to_string(),
        layers: graph.layers().to_vec(),
        tensors,
        weights: bin.file_name().expect("file name").to_string_lossy().into_owned(),
        weights_sha256: sha256_hex(&blob),
        attack: graph.attack.clone(),
    };
    std::fs::write(&bin, &blob)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NetError::Manifest(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn check_header(format: &str, expected_format: &str, version: u32) -> Result<(), NetError> {
    if format != expected_format {
        return Err(NetError::Manifest(format!("format `{format}`, expected `{expected_format}`")));
    }
    if version != FORMAT_VERSION {
        return Err(NetError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LayerGraph, NetError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| NetError::Manifest(e.to_string()))?;
    check_header(&manifest.format, MODEL_FORMAT, manifest.version)?;
    let blob = std::fs::read(path.with_file_name(&manifest.weights))?;
    let mut params = BTreeMap::new();
    for entry in &manifest.tensors {
        params.insert(entry.name.clone(), decode(entry, &blob)?);
    }
    let needed = manifest.tensors.iter().map(|e| e.offset + e.bytes).max().unwrap_or(0);
    if blob.len() != needed {
        return Err(NetError::Truncated {
            needed,
            found: blob.len(),
        });
    }
    if sha256_hex(&blob) != manifest.weights_sha256 {
        return Err(NetError::Manifest("weight blob hash mismatch".into()));
    }
    LayerGraph::from_parts(
        manifest.input_shape,
        manifest.layers,
        params,
        manifest.output,
        manifest.attack,
    )
    .map_err(|e| match e {
        NetError::MissingParam(name) => NetError::MissingTensor(name),
        other => other,
    })
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<(), NetError> {
    let mut blob = Vec::new();
    encode(data.images(), &mut blob);
    let bin = sidecar(path);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        split: data.split(),
        classes: data.classes(),
        image: TensorEntry {
            name: "images".into(),
            shape: data.images().shape().to_vec(),
            precision: data.images().precision(),
            offset: 0,
            bytes: blob.len(),
        },
        labels: data.labels().to_vec(),
        data: bin.file_name().expect("file name").to_string_lossy().into_owned(),
        data_sha256: sha256_hex(&blob),
    };
    std::fs::write(&bin, &blob)?;
    let text = serde_json::to_string(&manifest).map_err(|e| NetError::Manifest(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, NetError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| NetError::Manifest(e.to_string()))?;
    check_header(&manifest.format, DATASET_FORMAT, manifest.version)?;
    let blob = std::fs::read(path.with_file_name(&manifest.data))?;
    let images = decode(&manifest.image, &blob)?;
    if sha256_hex(&blob) != manifest.data_sha256 {
        return Err(NetError::Manifest("image blob hash mismatch".into()));
    }
    Dataset::new(images, manifest.labels, manifest.classes, manifest.split)
}
