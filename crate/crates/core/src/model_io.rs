//! Model files and mono WAV I/O.
//!
//! A model is a pair of files sharing a basename: `model.json` holds the
//! graph structure and `model.bin` the convolution weights as little-endian
//! f32, each kernel stored `[out][in][tap]` followed by its biases, kernels in
//! ascending node id. The manifest records the byte range of every weight and
//! bias block.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "sample_rate": 44100,
//!   "weights_file": "model.bin",
//!   "nodes": [
//!     { "id": 0, "kind": "source" },
//!     { "id": 1, "kind": "conv", "out_channels": 1, "in_channels": 1, "taps": 3,
//!       "stride": 1, "dilation": 1, "padding": { "left": 1, "right": 1 },
//!       "moved_right": 0,
//!       "weights": { "offset": 0, "length": 12 }, "bias": { "offset": 12, "length": 4 } },
//!     { "id": 2, "kind": "activation", "activation": "leaky_relu", "alpha": 0.2 },
//!     { "id": 3, "kind": "sink" }
//!   ],
//!   "edges": [ { "from": 0, "to": 1, "port": 0 }, { "from": 1, "to": 2, "port": 0 },
//!              { "from": 2, "to": 3, "port": 0 } ]
//! }
//! ```
//!
//! Other node kinds: `zero_upsample {factor}`, `delay {samples, role}` with
//! role `model` or `alignment`, `sum {arity}`, `fanout {arity}`.

pub mod wav;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{validate, ConvNode, DelayRole, Edge, GraphError, GraphIR, NodeKind};
use crate::tensor::{ActivationKind, Kernel, PaddingSpec, TensorError};

pub use wav::{read_wav, write_wav, WavError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported model format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("invalid manifest at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("corrupt weights blob: {0}")]
    CorruptBlob(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node}: {source}")]
    Kernel {
        node: usize,
        #[source]
        source: TensorError,
    },
}

impl ModelIoError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::SchemaError {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// A graph plus the sample rate it was built for, if known.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub graph: GraphIR,
    pub sample_rate: Option<u32>,
}

impl Model {
    pub fn new(graph: GraphIR, sample_rate: Option<u32>) -> Self {
        Self { graph, sample_rate }
    }
}

/// Byte range inside the weights blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRange {
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSpec {
    Source {
        id: usize,
    },
    Sink {
        id: usize,
    },
    Conv {
        id: usize,
        out_channels: usize,
        in_channels: usize,
        taps: usize,
        stride: usize,
        dilation: usize,
        padding: PaddingSpec,
        #[serde(default)]
        moved_right: usize,
        weights: BlobRange,
        bias: BlobRange,
    },
    ZeroUpsample {
        id: usize,
        factor: usize,
    },
    Activation {
        id: usize,
        #[serde(flatten)]
        function: ActivationKind,
    },
    Delay {
        id: usize,
        samples: usize,
        role: DelayRole,
    },
    Sum {
        id: usize,
        arity: usize,
    },
    Fanout {
        id: usize,
        arity: usize,
    },
}

impl NodeSpec {
    pub fn id(&self) -> usize {
        match self {
            NodeSpec::Source { id }
            | NodeSpec::Sink { id }
            | NodeSpec::Conv { id, .. }
            | NodeSpec::ZeroUpsample { id, .. }
            | NodeSpec::Activation { id, .. }
            | NodeSpec::Delay { id, .. }
            | NodeSpec::Sum { id, .. }
            | NodeSpec::Fanout { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    pub weights_file: String,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
}

fn f32_bytes(len: usize) -> u64 {
    (len * std::mem::size_of::<f32>()) as u64
}

/// Builds the manifest and blob for `model`; `weights_file` is recorded
/// verbatim.
pub fn encode(model: &Model, weights_file: &str) -> Result<(ModelManifest, Vec<u8>), ModelIoError> {
    validate(&model.graph)?;
    let mut blob = Vec::new();
    let mut push = |values: &[f32]| {
        let range = BlobRange {
            offset: blob.len() as u64,
            length: f32_bytes(values.len()),
        };
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        range
    };
    let nodes = model
        .graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, kind)| match kind {
            NodeKind::Source => NodeSpec::Source { id },
            NodeKind::Sink => NodeSpec::Sink { id },
            NodeKind::Conv(c) => NodeSpec::Conv {
                id,
                out_channels: c.kernel.out_channels(),
                in_channels: c.kernel.in_channels(),
                taps: c.kernel.taps(),
                stride: c.stride,
                dilation: c.dilation,
                padding: c.padding,
                moved_right: c.moved_right,
                weights: push(c.kernel.weights()),
                bias: push(c.kernel.bias()),
            },
            NodeKind::ZeroUpsample { factor } => NodeSpec::ZeroUpsample {
                id,
                factor: *factor,
            },
            NodeKind::Activation(function) => NodeSpec::Activation {
                id,
                function: *function,
            },
            NodeKind::Delay { samples, role } => NodeSpec::Delay {
                id,
                samples: *samples,
                role: *role,
            },
            NodeKind::Sum { arity } => NodeSpec::Sum { id, arity: *arity },
            NodeKind::Fanout { arity } => NodeSpec::Fanout { id, arity: *arity },
        })
        .collect();
    let edges = model.graph.edges().iter().map(EdgeSpec::from).collect();
    Ok((
        ModelManifest {
            format_version: FORMAT_VERSION,
            sample_rate: model.sample_rate,
            weights_file: weights_file.to_string(),
            nodes,
            edges,
        },
        blob,
    ))
}

/// Parses manifest text, checking the version before the schema.
pub fn parse_manifest(text: &str) -> Result<ModelManifest, ModelIoError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelIoError::schema("$", e.to_string()))?;
    match value.get("format_version") {
        None => return Err(ModelIoError::schema("format_version", "missing field")),
        Some(v) => match v.as_u64() {
            Some(found) if found == FORMAT_VERSION as u64 => {}
            Some(found) => {
                return Err(ModelIoError::VersionMismatch {
                    found,
                    supported: FORMAT_VERSION,
                })
            }
            None => return Err(ModelIoError::schema("format_version", "expected an integer")),
        },
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ModelIoError::schema(path, e.into_inner().to_string())
    })
}

fn read_block(blob: &[u8], range: BlobRange, count: usize, node: usize, what: &str) -> Result<Vec<f32>, ModelIoError> {
    if range.length != f32_bytes(count) {
        return Err(ModelIoError::CorruptBlob(format!(
            "node {node} {what}: descriptor length {} but the kernel needs {} bytes",
            range.length,
            f32_bytes(count)
        )));
    }
    let end = range.offset.checked_add(range.length).filter(|&e| e <= blob.len() as u64);
    let Some(end) = end else {
        return Err(ModelIoError::CorruptBlob(format!(
            "node {node} {what}: bytes {}..{} exceed the {}-byte blob",
            range.offset,
            range.offset.saturating_add(range.length),
            blob.len()
        )));
    };
    Ok(blob[range.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Rebuilds a model from a parsed manifest and its blob.
pub fn decode(manifest: &ModelManifest, blob: &[u8]) -> Result<Model, ModelIoError> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(ModelIoError::VersionMismatch {
            found: manifest.format_version as u64,
            supported: FORMAT_VERSION,
        });
    }
    let mut ranges = Vec::new();
    let mut g = GraphIR::new();
    for (i, spec) in manifest.nodes.iter().enumerate() {
        if spec.id() != i {
            return Err(ModelIoError::schema(
                format!("nodes[{i}].id"),
                format!("expected id {i}, got {}", spec.id()),
            ));
        }
        let kind = match *spec {
            NodeSpec::Source { .. } => NodeKind::Source,
            NodeSpec::Sink { .. } => NodeKind::Sink,
            NodeSpec::Conv {
                out_channels,
                in_channels,
                taps,
                stride,
                dilation,
                padding,
                moved_right,
                weights,
                bias,
                ..
            } => {
                let w = read_block(blob, weights, out_channels * in_channels * taps, i, "weights")?;
                let b = read_block(blob, bias, out_channels, i, "bias")?;
                ranges.push((weights, i));
                ranges.push((bias, i));
                let kernel = Kernel::new(out_channels, in_channels, taps, w, b)
                    .map_err(|source| ModelIoError::Kernel { node: i, source })?;
                let mut c = ConvNode::new(kernel, stride, dilation, padding);
                c.moved_right = moved_right;
                NodeKind::Conv(c)
            }
            NodeSpec::ZeroUpsample { factor, .. } => NodeKind::ZeroUpsample { factor },
            NodeSpec::Activation { function, .. } => NodeKind::Activation(function),
            NodeSpec::Delay { samples, role, .. } => NodeKind::Delay { samples, role },
            NodeSpec::Sum { arity, .. } => NodeKind::Sum { arity },
            NodeSpec::Fanout { arity, .. } => NodeKind::Fanout { arity },
        };
        g.add_node(kind);
    }
    ranges.sort_by_key(|(r, _)| r.offset);
    for pair in ranges.windows(2) {
        let ((a, na), (b, nb)) = (pair[0], pair[1]);
        if a.offset + a.length > b.offset {
            return Err(ModelIoError::CorruptBlob(format!(
                "weight ranges of nodes {na} and {nb} overlap"
            )));
        }
    }
    let used: u64 = ranges.iter().map(|(r, _)| r.length).sum();
    if used != blob.len() as u64 {
        return Err(ModelIoError::CorruptBlob(format!(
            "blob holds {} bytes but the manifest describes {used}",
            blob.len()
        )));
    }
    let n = g.nodes().len();
    for (i, e) in manifest.edges.iter().enumerate() {
        for (field, v) in [("from", e.from), ("to", e.to)] {
            if v >= n {
                return Err(ModelIoError::schema(
                    format!("edges[{i}].{field}"),
                    format!("node {v} does not exist"),
                ));
            }
        }
        g.connect(e.from, e.to, e.port);
    }
    validate(&g)?;
    Ok(Model::new(g, manifest.sample_rate))
}

/// Weights path paired with a manifest path: same basename, `.bin`.
pub fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (JSON manifest) and its `.bin` sibling.
pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelIoError> {
    let bin = weights_path(path);
    let name = bin
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ModelIoError::schema("weights_file", format!("{} is not valid UTF-8", bin.display())))?
        .to_string();
    let (manifest, blob) = encode(model, &name)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is always serializable");
    fs::write(path, text + "\n").map_err(|e| ModelIoError::io(path, e))?;
    fs::write(&bin, blob).map_err(|e| ModelIoError::io(&bin, e))?;
    Ok(())
}

/// Reads a manifest and the weights file it names (relative to the
/// manifest's directory).
pub fn load_model(path: &Path) -> Result<Model, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|e| ModelIoError::io(path, e))?;
    let manifest = parse_manifest(&text)?;
    let bin = path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&manifest.weights_file);
    let blob = fs::read(&bin).map_err(|e| ModelIoError::io(&bin, e))?;
    decode(&manifest, &blob)
}

impl From<&Edge> for EdgeSpec {
    fn from(e: &Edge) -> Self {
        Self {
            from: e.from,
            to: e.to,
            port: e.port,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::causalize;
    use crate::synth::{make_synthetic_rave, random_graph, RandomGraphConfig, SynthConfig};

    fn sample_model() -> Model {
        let g = make_synthetic_rave(&SynthConfig::default()).unwrap();
        Model::new(causalize(&g).unwrap().graph, Some(44_100))
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = sample_model();
        save_model(&model, &path).unwrap();
        assert!(dir.path().join("model.bin").exists());
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        for (a, b) in model.graph.conv_nodes().zip(back.graph.conv_nodes()) {
            let bits = |k: &Kernel| k.weights().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.1.kernel), bits(&b.1.kernel));
        }
    }

    #[test]
    fn random_graphs_round_trip_in_memory() {
        for seed in 0..30 {
            let model = Model::new(random_graph(seed, &RandomGraphConfig::default()), None);
            let (manifest, blob) = encode(&model, "m.bin").unwrap();
            let text = serde_json::to_string(&manifest).unwrap();
            let back = decode(&parse_manifest(&text).unwrap(), &blob).unwrap();
            assert_eq!(back, model, "seed {seed}");
        }
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let model = sample_model();
        let (manifest, blob) = encode(&model, "m.bin").unwrap();
        let err = decode(&manifest, &blob[..blob.len() - 4]).unwrap_err();
        assert!(matches!(err, ModelIoError::CorruptBlob(_)), "{err}");
        let mut longer = blob.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&manifest, &longer), Err(ModelIoError::CorruptBlob(_))));
    }

    #[test]
    fn overlapping_ranges_are_corrupt() {
        let (mut manifest, blob) = encode(&sample_model(), "m.bin").unwrap();
        if let NodeSpec::Conv { bias, .. } = manifest
            .nodes
            .iter_mut()
            .find(|n| matches!(n, NodeSpec::Conv { .. }))
            .unwrap()
        {
            bias.offset = 0;
        }
        let err = decode(&manifest, &blob).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn unknown_kind_names_the_kind_and_path() {
        let text = r#"{"format_version":1,"weights_file":"m.bin",
            "nodes":[{"id":0,"kind":"source"},{"id":1,"kind":"lstm"}],"edges":[]}"#;
        match parse_manifest(text) {
            Err(ModelIoError::SchemaError { path, message }) => {
                assert_eq!(path, "nodes[1].kind");
                assert!(message.contains("lstm"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = r#"{"format_version":1,"weights_file":"m.bin",
            "nodes":[{"id":0,"kind":"delay","samples":-3,"role":"model"}],"edges":[]}"#;
        match parse_manifest(text) {
            Err(ModelIoError::SchemaError { path, message }) => {
                assert_eq!(path, "nodes[0]");
                assert!(message.contains("-3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_checked_first() {
        let text = r#"{"format_version":7,"whatever":true}"#;
        assert!(matches!(
            parse_manifest(text),
            Err(ModelIoError::VersionMismatch { found: 7, supported: 1 })
        ));
    }

    #[test]
    fn invalid_graph_rejected_with_graph_error() {
        let g = GraphIR::chain([NodeKind::Sum { arity: 2 }]);
        let manifest = ModelManifest {
            format_version: 1,
            sample_rate: None,
            weights_file: "m.bin".into(),
            nodes: vec![
                NodeSpec::Source { id: 0 },
                NodeSpec::Sum { id: 1, arity: 2 },
                NodeSpec::Sink { id: 2 },
            ],
            edges: g.edges().iter().map(EdgeSpec::from).collect(),
        };
        assert_eq!(
            decode(&manifest, &[]).unwrap_err().to_string(),
            validate(&g).unwrap_err().to_string()
        );
        assert!(matches!(decode(&manifest, &[]), Err(ModelIoError::Graph(_))));
    }

    #[test]
    fn missing_weights_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&sample_model(), &path).unwrap();
        fs::remove_file(dir.path().join("model.bin")).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("model.bin"), "{err}");
    }
}
