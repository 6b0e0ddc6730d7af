//! Binary model container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CPRUNE01" (the last two bytes are the format version)
//! 8       4     manifest length M, u32 little-endian
//! 12      M     manifest, UTF-8 JSON (see `Manifest`)
//! 12+M    8     blob length B in bytes, u64 little-endian, a multiple of 4
//! 20+M    B     weight blob, f32 little-endian
//! 20+M+B  4     CRC-32 (IEEE) of the blob, u32 little-endian
//! ```
//!
//! The manifest lists nodes in id order. Each conv node points into the blob
//! with `offset` and `len` counted in f32 elements; weights are stored
//! `[c_out][c_in][kh][kw]`, the bias right after its weights.

use cprune_core::nnir::{LayerSpec, Node, Violation};
use cprune_core::{validate, ActDims, LayerKind, Network, NodeId, WeightDims, Weights};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CPRUNE01";
const MAGIC_FAMILY: &[u8; 6] = b"CPRUNE";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("not a cprune model: bad or missing header")]
    Header,
    #[error("unsupported model format version `{found}` (this build reads `01`)")]
    Version { found: String },
    #[error("model file truncated: {0}")]
    Truncated(&'static str),
    #[error("weight blob checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("network fails validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    input_dims: [usize; 3],
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    kind: LayerKind,
    stride: usize,
    padding: usize,
    kernel: usize,
    has_bias: bool,
    inputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<BlobRange>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRef {
    dims: [usize; 4],
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobRange {
    offset: usize,
    len: usize,
}

pub fn serialize_model(net: &Network) -> Result<Vec<u8>, ModelFileError> {
    let violations = validate(net);
    if !violations.is_empty() {
        return Err(ModelFileError::Invalid(violations));
    }
    let mut blob: Vec<f32> = Vec::new();
    let mut nodes = Vec::with_capacity(net.nodes.len());
    for node in &net.nodes {
        let weights = node.weights.as_ref().map(|w| {
            let offset = blob.len();
            blob.extend_from_slice(&w.data);
            let d = w.dims;
            TensorRef { dims: [d.c_out, d.c_in, d.kh, d.kw], offset, len: w.data.len() }
        });
        let bias = node.bias.as_ref().map(|b| {
            let offset = blob.len();
            blob.extend_from_slice(b);
            BlobRange { offset, len: b.len() }
        });
        nodes.push(NodeEntry {
            name: node.name.clone(),
            kind: node.spec.kind,
            stride: node.spec.stride,
            padding: node.spec.padding,
            kernel: node.spec.kernel,
            has_bias: node.spec.has_bias,
            inputs: node.inputs.iter().map(|i| i.0).collect(),
            weights,
            bias,
        });
    }
    let d = net.input_dims;
    let manifest = Manifest { input_dims: [d.c, d.h, d.w], nodes };
    let manifest = serde_json::to_vec(&manifest).map_err(|e| ModelFileError::Manifest(e.to_string()))?;
    let manifest_len = u32::try_from(manifest.len()).map_err(|_| ModelFileError::Manifest("manifest exceeds 4 GiB".into()))?;

    let blob_bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = Vec::with_capacity(24 + manifest.len() + blob_bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(blob_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob_bytes);
    out.extend_from_slice(&crc32fast::hash(&blob_bytes).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ModelFileError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn parse_model(bytes: &[u8]) -> Result<Network, ModelFileError> {
    if bytes.len() < MAGIC.len() || &bytes[..6] != MAGIC_FAMILY {
        return Err(ModelFileError::Header);
    }
    if &bytes[..8] != MAGIC {
        return Err(ModelFileError::Version { found: String::from_utf8_lossy(&bytes[6..8]).into_owned() });
    }
    let mut r = Reader { bytes, pos: 8 };
    let manifest_len = u32::from_le_bytes(r.take(4, "manifest length")?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(manifest_len, "manifest")?)
        .map_err(|e| ModelFileError::Manifest(e.to_string()))?;
    let blob_len = u64::from_le_bytes(r.take(8, "blob length")?.try_into().unwrap());
    let blob_len = usize::try_from(blob_len).map_err(|_| ModelFileError::Truncated("weight blob"))?;
    if blob_len % 4 != 0 {
        return Err(ModelFileError::Manifest(format!("blob length {blob_len} is not a multiple of 4")));
    }
    let blob_bytes = r.take(blob_len, "weight blob")?;
    let stored = u32::from_le_bytes(r.take(4, "checksum")?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(ModelFileError::TrailingBytes(bytes.len() - r.pos));
    }
    let computed = crc32fast::hash(blob_bytes);
    if stored != computed {
        return Err(ModelFileError::Checksum { stored, computed });
    }
    let blob: Vec<f32> = blob_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    build_network(manifest, &blob)
}

fn slice<'b>(blob: &'b [f32], offset: usize, len: usize, node: &str) -> Result<&'b [f32], ModelFileError> {
    offset
        .checked_add(len)
        .and_then(|end| blob.get(offset..end))
        .ok_or_else(|| ModelFileError::Manifest(format!("node `{node}` points outside the weight blob")))
}

fn build_network(manifest: Manifest, blob: &[f32]) -> Result<Network, ModelFileError> {
    let [c, h, w] = manifest.input_dims;
    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    for e in manifest.nodes {
        let weights = match e.weights {
            Some(t) => {
                let [c_out, c_in, kh, kw] = t.dims;
                let dims = WeightDims { c_out, c_in, kh, kw };
                if dims.len() != t.len {
                    return Err(ModelFileError::Manifest(format!(
                        "node `{}`: weight length {} does not match dims {dims}",
                        e.name, t.len
                    )));
                }
                Some(Weights::new(dims, slice(blob, t.offset, t.len, &e.name)?.to_vec()))
            }
            None => None,
        };
        let bias = match e.bias {
            Some(b) => Some(slice(blob, b.offset, b.len, &e.name)?.to_vec()),
            None => None,
        };
        let spec = LayerSpec { kind: e.kind, stride: e.stride, padding: e.padding, kernel: e.kernel, has_bias: e.has_bias };
        nodes.push(Node { name: e.name, spec, weights, bias, inputs: e.inputs.into_iter().map(NodeId).collect() });
    }
    let net = Network { nodes, input_dims: ActDims { c, h, w } };
    let violations = validate(&net);
    if !violations.is_empty() {
        return Err(ModelFileError::Invalid(violations));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cprune_core::{synth_model, Family, TopologySpec};

    fn sample() -> Network {
        synth_model(&TopologySpec { family: Family::SqueezenetLike, depth: 2, base_channels: 8, seed: 1 }).unwrap()
    }

    #[test]
    fn empty_input_is_a_header_error() {
        assert!(matches!(parse_model(&[]), Err(ModelFileError::Header)));
        assert!(matches!(parse_model(b"PNG\x00\x00\x00\x00\x00"), Err(ModelFileError::Header)));
    }

    #[test]
    fn other_version_is_reported() {
        let mut bytes = serialize_model(&sample()).unwrap();
        bytes[6..8].copy_from_slice(b"02");
        assert!(matches!(parse_model(&bytes), Err(ModelFileError::Version { found }) if found == "02"));
    }

    #[test]
    fn flipped_weight_bit_fails_the_checksum() {
        let mut bytes = serialize_model(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 0x01;
        assert!(matches!(parse_model(&bytes), Err(ModelFileError::Checksum { .. })));
    }

    #[test]
    fn every_prefix_is_rejected() {
        let bytes = serialize_model(&sample()).unwrap();
        for cut in 0..bytes.len() {
            assert!(parse_model(&bytes[..cut]).is_err(), "prefix {cut}");
        }
    }
}
