//! Structural filter removal with cross-layer propagation.
//!
//! Removing output filters from a conv layer walks its consumers:
//!
//! * standard/pointwise convs lose the matching input-channel slices, and the
//!   walk stops there;
//! * depthwise convs lose the filter (and bias entry) at each removed channel,
//!   and the walk continues to their consumers. In a depthwise-separable stack
//!   this couples three adjacent layers;
//! * relu, pooling and the output node are channel-wise and pass the removed
//!   channels through unchanged;
//! * concat shifts the removed channels by the channel offset of the pruned
//!   branch (predecessor order) before continuing.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::nnir::{infer_shapes, validate, ActDims, LayerKind, Network, NodeId, ShapeError};
use crate::ranking::FilterCluster;

/// Default minimum number of filters a pruned layer keeps.
pub const DEFAULT_MIN_REMAINING: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PruneConfig {
    pub min_remaining: usize,
    /// Allow pruning the first conv of the network.
    pub include_first: bool,
    /// Allow pruning the classifier tail (convs with no conv between them and
    /// the output).
    pub include_tail: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { min_remaining: DEFAULT_MIN_REMAINING, include_first: false, include_tail: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneRequest {
    pub layer: NodeId,
    /// Strictly ascending filter indices.
    pub indices: Vec<usize>,
}

impl PruneRequest {
    pub fn new(layer: NodeId, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self { layer, indices }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Axis {
    OutputFilters,
    InputChannels,
    DepthwiseChannels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Touch {
    pub node: NodeId,
    pub axis: Axis,
    pub removed: Vec<usize>,
}

/// Every slice removed by one prune, in walk order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropagationRecord {
    pub touched: Vec<Touch>,
}

impl PropagationRecord {
    /// Weight and bias elements removed, computed from the pre-prune network
    /// without re-walking the graph.
    pub fn removed_params(&self, before: &Network) -> u64 {
        self.touched
            .iter()
            .map(|t| {
                let node = before.node(t.node);
                let d = node.weight_dims().expect("touched nodes are convs");
                let bias = usize::from(node.bias.is_some());
                let r = t.removed.len();
                (match t.axis {
                    Axis::OutputFilters | Axis::DepthwiseChannels => r * (d.filter_len() + bias),
                    Axis::InputChannels => r * d.c_out * d.kernel_len(),
                }) as u64
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneError {
    UnknownLayer { layer: NodeId },
    /// Only standard and pointwise convs are pruned directly; depthwise
    /// channels follow their producer.
    NotPrunable { layer: String, kind: LayerKind },
    NotAscending { layer: String },
    IndexOutOfRange { layer: String, index: usize, c_out: usize },
    WouldEmptyLayer { layer: String, remaining: usize, min_remaining: usize },
    UnsupportedConsumer { node: String, reason: &'static str },
    StaleCluster { layer: String, index: usize, c_out: usize },
    Shape(ShapeError),
}

impl fmt::Display for PruneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownLayer { layer } => write!(f, "node {layer} does not exist"),
            Self::NotPrunable { layer, kind } => write!(f, "`{layer}` ({kind}) cannot be pruned directly"),
            Self::NotAscending { layer } => {
                write!(f, "prune indices for `{layer}` must be strictly ascending and duplicate-free")
            }
            Self::IndexOutOfRange { layer, index, c_out } => {
                write!(f, "filter {index} out of range for `{layer}` with {c_out} filters")
            }
            Self::WouldEmptyLayer { layer, remaining, min_remaining } => write!(
                f,
                "pruning would leave `{layer}` with {remaining} filters, minimum is {min_remaining}"
            ),
            Self::UnsupportedConsumer { node, reason } => write!(f, "cannot propagate through `{node}`: {reason}"),
            Self::StaleCluster { layer, index, c_out } => write!(
                f,
                "cluster member {index} is stale for `{layer}` ({c_out} filters now); re-rank before pruning"
            ),
            Self::Shape(e) => e.fmt(f),
        }
    }
}

impl From<ShapeError> for PruneError {
    fn from(e: ShapeError) -> Self {
        Self::Shape(e)
    }
}

/// Where a channel removal has to go next.
struct Pending {
    consumer: NodeId,
    producer: NodeId,
    channels: Vec<usize>,
}

fn check_request(net: &Network, req: &PruneRequest, min_remaining: usize) -> Result<usize, PruneError> {
    let node = net.get(req.layer).ok_or(PruneError::UnknownLayer { layer: req.layer })?;
    if !matches!(node.kind(), LayerKind::ConvStandard | LayerKind::ConvPointwise) {
        return Err(PruneError::NotPrunable { layer: node.name.clone(), kind: node.kind() });
    }
    let c_out = node.c_out().unwrap_or(0);
    if req.indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PruneError::NotAscending { layer: node.name.clone() });
    }
    if let Some(&index) = req.indices.iter().find(|&&i| i >= c_out) {
        return Err(PruneError::IndexOutOfRange { layer: node.name.clone(), index, c_out });
    }
    let remaining = c_out - req.indices.len();
    if remaining < min_remaining.max(1) {
        return Err(PruneError::WouldEmptyLayer {
            layer: node.name.clone(),
            remaining,
            min_remaining: min_remaining.max(1),
        });
    }
    Ok(c_out)
}

/// Removes the requested output filters and propagates the channel removal.
pub fn remove_filters(
    net: &Network,
    req: &PruneRequest,
    min_remaining: usize,
) -> Result<(Network, PropagationRecord), PruneError> {
    check_request(net, req, min_remaining)?;
    let shapes = infer_shapes(net)?;
    let mut out = net.clone();
    let mut record = PropagationRecord::default();
    if req.indices.is_empty() {
        return Ok((out, record));
    }

    let node = &mut out.nodes[req.layer.0];
    node.weights = node.weights.as_ref().map(|w| w.without_filters(&req.indices));
    node.bias = node.bias.as_ref().map(|b| drop_entries(b, &req.indices));
    record.touched.push(Touch { node: req.layer, axis: Axis::OutputFilters, removed: req.indices.clone() });

    let mut visited = BTreeSet::new();
    let mut queue: Vec<Pending> = net
        .consumers(req.layer)
        .into_iter()
        .map(|c| Pending { consumer: c, producer: req.layer, channels: req.indices.clone() })
        .collect();
    while let Some(p) = queue.pop() {
        if !visited.insert(p.consumer) {
            return Err(PruneError::UnsupportedConsumer {
                node: net.node(p.consumer).name.clone(),
                reason: "reached along more than one path",
            });
        }
        let node = &mut out.nodes[p.consumer.0];
        let forward_to = |channels: Vec<usize>, queue: &mut Vec<Pending>| {
            for c in net.consumers(p.consumer) {
                queue.push(Pending { consumer: c, producer: p.consumer, channels: channels.clone() });
            }
        };
        match node.kind() {
            LayerKind::ConvStandard | LayerKind::ConvPointwise => {
                node.weights = node.weights.as_ref().map(|w| w.without_input_channels(&p.channels));
                record.touched.push(Touch { node: p.consumer, axis: Axis::InputChannels, removed: p.channels });
            }
            LayerKind::ConvDepthwise => {
                node.weights = node.weights.as_ref().map(|w| w.without_filters(&p.channels));
                node.bias = node.bias.as_ref().map(|b| drop_entries(b, &p.channels));
                record.touched.push(Touch {
                    node: p.consumer,
                    axis: Axis::DepthwiseChannels,
                    removed: p.channels.clone(),
                });
                forward_to(p.channels, &mut queue);
            }
            LayerKind::Relu | LayerKind::PoolMax | LayerKind::PoolAvg | LayerKind::Output => {
                forward_to(p.channels, &mut queue);
            }
            LayerKind::Concat => {
                let positions: Vec<usize> = node
                    .inputs
                    .iter()
                    .enumerate()
                    .filter(|(_, &i)| i == p.producer)
                    .map(|(pos, _)| pos)
                    .collect();
                if positions.len() != 1 {
                    return Err(PruneError::UnsupportedConsumer {
                        node: node.name.clone(),
                        reason: "concat lists the pruned branch more than once",
                    });
                }
                let offset = concat_offset(&shapes, &node.inputs, positions[0]);
                forward_to(p.channels.iter().map(|c| c + offset).collect(), &mut queue);
            }
            LayerKind::Input => {
                return Err(PruneError::UnsupportedConsumer { node: node.name.clone(), reason: "input has no producer" })
            }
        }
    }
    debug_assert!(validate(&out).is_empty(), "{:?}", validate(&out));
    Ok((out, record))
}

fn concat_offset(shapes: &[ActDims], inputs: &[NodeId], position: usize) -> usize {
    inputs[..position].iter().map(|p| shapes[p.0].c).sum()
}

fn drop_entries(values: &[f32], sorted: &[usize]) -> Vec<f32> {
    let mut skip = sorted.iter().peekable();
    let mut out = Vec::with_capacity(values.len() - sorted.len());
    for (i, &v) in values.iter().enumerate() {
        if skip.peek() == Some(&&i) {
            skip.next();
        } else {
            out.push(v);
        }
    }
    out
}

/// Removes a cluster's members. Fails with [`PruneError::StaleCluster`] when
/// any member index no longer exists in `net`.
pub fn apply_cluster(
    net: &Network,
    cluster: &FilterCluster,
    min_remaining: usize,
) -> Result<(Network, PropagationRecord), PruneError> {
    let node = net.get(cluster.layer).ok_or(PruneError::UnknownLayer { layer: cluster.layer })?;
    let c_out = node.c_out().unwrap_or(0);
    if let Some(m) = cluster.members.iter().find(|m| m.layer != cluster.layer || m.index >= c_out) {
        return Err(PruneError::StaleCluster { layer: node.name.clone(), index: m.index, c_out });
    }
    remove_filters(net, &PruneRequest::new(cluster.layer, cluster.sorted_indices()), min_remaining)
}

/// Whether removing channels from `id` reaches only supported consumers.
fn propagation_supported(net: &Network, id: NodeId) -> bool {
    let mut stack = vec![(id, net.consumers(id))];
    let mut seen = BTreeSet::new();
    while let Some((producer, consumers)) = stack.pop() {
        for c in consumers {
            if !seen.insert(c) {
                return false;
            }
            let node = net.node(c);
            match node.kind() {
                LayerKind::ConvStandard | LayerKind::ConvPointwise => {}
                LayerKind::Concat => {
                    if node.inputs.iter().filter(|&&i| i == producer).count() != 1 {
                        return false;
                    }
                    stack.push((c, net.consumers(c)));
                }
                LayerKind::ConvDepthwise | LayerKind::Relu | LayerKind::PoolMax | LayerKind::PoolAvg | LayerKind::Output => {
                    stack.push((c, net.consumers(c)));
                }
                LayerKind::Input => return false,
            }
        }
    }
    true
}

/// Whether any conv lies on some path from the input to `id` (exclusive).
fn has_conv_ancestor(net: &Network, id: NodeId) -> bool {
    let mut stack: Vec<NodeId> = net.node(id).inputs.clone();
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            continue;
        }
        if net.node(n).is_conv() {
            return true;
        }
        stack.extend(net.node(n).inputs.iter().copied());
    }
    false
}

/// Whether the output is reachable from `id` without crossing another conv.
fn feeds_output_directly(net: &Network, id: NodeId) -> bool {
    let mut stack = net.consumers(id);
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            continue;
        }
        match net.node(n).kind() {
            LayerKind::Output => return true,
            k if k.is_conv() => {}
            _ => stack.extend(net.consumers(n)),
        }
    }
    false
}

/// Standard and pointwise convs whose removal propagation is supported,
/// minus the first conv and the classifier tail unless `cfg` lifts those
/// exclusions. Returned in node order.
pub fn prunable_layers(net: &Network, cfg: &PruneConfig) -> Vec<NodeId> {
    net.ids()
        .filter(|&id| matches!(net.node(id).kind(), LayerKind::ConvStandard | LayerKind::ConvPointwise))
        .filter(|&id| cfg.include_first || has_conv_ancestor(net, id))
        .filter(|&id| cfg.include_tail || !feeds_output_directly(net, id))
        .filter(|&id| propagation_supported(net, id))
        .collect()
}
