//! Network intermediate representation.
//!
//! A [`Network`] is an immutable DAG of typed layers. Convolution weights are
//! stored `[c_out][c_in][kh][kw]`, row-major; activations are single-sample,
//! channel-major `[c][h][w]`. Batch-norm is assumed folded into conv weights
//! and bias, so the IR has no normalization node.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Index of a node inside its [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Activation dimensions of one sample (`c × h × w`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ActDims {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for ActDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Weight tensor dimensions `(c_out, c_in, kh, kw)`.
///
/// `c_in` is the number of kernels per filter: the input channel count for
/// standard and pointwise convolutions, `1` for depthwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightDims {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
}

impl WeightDims {
    pub const fn new(c_out: usize, c_in: usize, kh: usize, kw: usize) -> Self {
        Self { c_out, c_in, kh, kw }
    }

    pub fn len(&self) -> usize {
        self.c_out * self.filter_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one filter: `c_in · kh · kw`.
    pub fn filter_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw
    }
}

impl fmt::Display for WeightDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.c_out, self.c_in, self.kh, self.kw)
    }
}

/// Dense 4-D weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub dims: WeightDims,
    pub data: Vec<f32>,
}

impl Weights {
    pub fn new(dims: WeightDims, data: Vec<f32>) -> Self {
        Self { dims, data }
    }

    pub fn zeros(dims: WeightDims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    pub fn filled(dims: WeightDims, value: f32) -> Self {
        Self { dims, data: vec![value; dims.len()] }
    }

    /// Flat slice of filter `k`.
    pub fn filter(&self, k: usize) -> &[f32] {
        let n = self.dims.filter_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn filter_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.dims.filter_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Drops the output slices at `sorted` (ascending, in range).
    pub fn without_filters(&self, sorted: &[usize]) -> Weights {
        let n = self.dims.filter_len();
        let mut data = Vec::with_capacity(self.data.len() - sorted.len() * n);
        let mut skip = sorted.iter().peekable();
        for k in 0..self.dims.c_out {
            if skip.peek() == Some(&&k) {
                skip.next();
                continue;
            }
            data.extend_from_slice(self.filter(k));
        }
        let dims = WeightDims { c_out: self.dims.c_out - sorted.len(), ..self.dims };
        Weights { dims, data }
    }

    /// Drops the input-channel slices at `sorted` from every filter.
    pub fn without_input_channels(&self, sorted: &[usize]) -> Weights {
        let klen = self.dims.kernel_len();
        let c_in = self.dims.c_in - sorted.len();
        let mut data = Vec::with_capacity(self.dims.c_out * c_in * klen);
        for k in 0..self.dims.c_out {
            let filter = self.filter(k);
            let mut skip = sorted.iter().peekable();
            for c in 0..self.dims.c_in {
                if skip.peek() == Some(&&c) {
                    skip.next();
                    continue;
                }
                data.extend_from_slice(&filter[c * klen..(c + 1) * klen]);
            }
        }
        Weights { dims: WeightDims { c_in, ..self.dims }, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerKind {
    Input,
    Output,
    ConvStandard,
    ConvDepthwise,
    ConvPointwise,
    Relu,
    PoolMax,
    PoolAvg,
    Concat,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(self, Self::ConvStandard | Self::ConvDepthwise | Self::ConvPointwise)
    }

    /// Layers whose output channel `c` depends only on input channel `c`.
    pub fn is_channelwise(self) -> bool {
        matches!(self, Self::Relu | Self::PoolMax | Self::PoolAvg | Self::Output)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Output => "output",
            Self::ConvStandard => "conv_standard",
            Self::ConvDepthwise => "conv_depthwise",
            Self::ConvPointwise => "conv_pointwise",
            Self::Relu => "relu",
            Self::PoolMax => "pool_max",
            Self::PoolAvg => "pool_avg",
            Self::Concat => "concat",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = NnirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "input" => Self::Input,
            "output" => Self::Output,
            "conv_standard" => Self::ConvStandard,
            "conv_depthwise" => Self::ConvDepthwise,
            "conv_pointwise" => Self::ConvPointwise,
            "relu" => Self::Relu,
            "pool_max" => Self::PoolMax,
            "pool_avg" => Self::PoolAvg,
            "concat" => Self::Concat,
            other => return Err(NnirError::UnknownLayerKind(other.to_string())),
        })
    }
}

/// Static description of a layer.
///
/// `kernel` is the pooling window and is ignored by every other kind; conv
/// kernel sizes come from the weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub stride: usize,
    pub padding: usize,
    pub kernel: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub const fn of(kind: LayerKind) -> Self {
        Self { kind, stride: 1, padding: 0, kernel: 0, has_bias: false }
    }

    pub const fn conv(kind: LayerKind, stride: usize, padding: usize, has_bias: bool) -> Self {
        Self { kind, stride, padding, kernel: 0, has_bias }
    }

    pub const fn pool(kind: LayerKind, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kind, stride, padding, kernel, has_bias: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub spec: LayerSpec,
    pub weights: Option<Weights>,
    pub bias: Option<Vec<f32>>,
    pub inputs: Vec<NodeId>,
}

impl Node {
    pub fn kind(&self) -> LayerKind {
        self.spec.kind
    }

    pub fn is_conv(&self) -> bool {
        self.spec.kind.is_conv()
    }

    /// Output filter count of a conv node.
    pub fn c_out(&self) -> Option<usize> {
        self.weights.as_ref().map(|w| w.dims.c_out)
    }

    pub fn weight_dims(&self) -> Option<WeightDims> {
        self.weights.as_ref().map(|w| w.dims)
    }
}

/// A DAG of layers with exactly one input and one output node.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub input_dims: ActDims,
}

impl Network {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn input_id(&self) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.kind() == LayerKind::Input).map(NodeId)
    }

    pub fn output_id(&self) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.kind() == LayerKind::Output).map(NodeId)
    }

    pub fn conv_ids(&self) -> Vec<NodeId> {
        self.ids().filter(|&id| self.node(id).is_conv()).collect()
    }

    /// Nodes listing `id` as a predecessor, in node order.
    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.ids().filter(|&c| self.node(c).inputs.contains(&id)).collect()
    }

    /// Kahn order; ties resolved by node index so the order is deterministic.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, ShapeError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            for p in &node.inputs {
                if p.0 >= n {
                    return Err(ShapeError::new(&node.name, format!("dangling predecessor {p}")));
                }
                indegree[i] += 1;
            }
        }
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for p in &node.inputs {
                succ[p.0].push(i);
            }
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_front() {
            order.push(NodeId(i));
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(ShapeError::new(&self.nodes[stuck].name, "graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// Total filter count over all conv nodes.
    pub fn total_filters(&self) -> usize {
        self.nodes.iter().filter_map(Node::c_out).sum()
    }
}

/// A shape inference failure, naming the offending node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub node: String,
    pub message: String,
}

impl ShapeError {
    pub fn new(node: &str, message: String) -> Self {
        Self { node: node.to_string(), message }
    }
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shape error at `{}`: {}", self.node, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NnirError {
    UnknownLayerKind(String),
    UnsupportedFamily(String),
    InvalidTopology(&'static str),
}

impl fmt::Display for NnirError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownLayerKind(k) => write!(f, "unknown layer kind `{k}`"),
            Self::UnsupportedFamily(k) => write!(f, "unsupported topology family `{k}`"),
            Self::InvalidTopology(msg) => write!(f, "invalid topology spec: {msg}"),
        }
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `node` expects `expected` input channels but `producer` emits `found`.
    ShapeMismatch { node: String, producer: String, expected: usize, found: usize },
    Cycle { node: String },
    DanglingPredecessor { node: String, predecessor: usize },
    BiasLength { node: String, expected: usize, found: usize },
    Arity { node: String, kind: LayerKind, found: usize },
    MissingWeights { node: String },
    UnexpectedWeights { node: String },
    WeightLength { node: String, expected: usize, found: usize },
    BadKernel { node: String, reason: &'static str },
    BadSpec { node: String, reason: &'static str },
    ConcatSpatial { node: String },
    NonPositiveDim { node: String },
    DuplicateName { node: String },
    EndpointCount { kind: LayerKind, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { node, producer, expected, found } => write!(
                f,
                "`{node}` expects {expected} input channels but `{producer}` emits {found}"
            ),
            Self::Cycle { node } => write!(f, "`{node}` is part of a cycle"),
            Self::DanglingPredecessor { node, predecessor } => {
                write!(f, "`{node}` lists missing predecessor #{predecessor}")
            }
            Self::BiasLength { node, expected, found } => {
                write!(f, "`{node}` bias has {found} entries, expected {expected}")
            }
            Self::Arity { node, kind, found } => {
                write!(f, "`{node}` ({kind}) has {found} predecessors")
            }
            Self::MissingWeights { node } => write!(f, "`{node}` is a conv without weights"),
            Self::UnexpectedWeights { node } => write!(f, "`{node}` carries weights but is not a conv"),
            Self::WeightLength { node, expected, found } => {
                write!(f, "`{node}` weight data has {found} values, dims need {expected}")
            }
            Self::BadKernel { node, reason } => write!(f, "`{node}`: {reason}"),
            Self::BadSpec { node, reason } => write!(f, "`{node}`: {reason}"),
            Self::ConcatSpatial { node } => {
                write!(f, "`{node}` concatenates inputs with different spatial dims")
            }
            Self::NonPositiveDim { node } => write!(f, "`{node}` computes a non-positive dimension"),
            Self::DuplicateName { node } => write!(f, "node name `{node}` is not unique"),
            Self::EndpointCount { kind, found } => write!(f, "network has {found} {kind} nodes, expected 1"),
        }
    }
}

fn arity_ok(kind: LayerKind, n: usize) -> bool {
    match kind {
        LayerKind::Input => n == 0,
        LayerKind::Concat => n >= 2,
        _ => n == 1,
    }
}

/// `floor((in + 2·pad − k) / stride) + 1`, or `None` when non-positive.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Structural checks that do not depend on shape flow.
fn check_nodes(net: &Network, out: &mut Vec<Violation>) {
    for kind in [LayerKind::Input, LayerKind::Output] {
        let found = net.nodes.iter().filter(|n| n.kind() == kind).count();
        if found != 1 {
            out.push(Violation::EndpointCount { kind, found });
        }
    }
    for (i, node) in net.nodes.iter().enumerate() {
        let name = || node.name.clone();
        if net.nodes[..i].iter().any(|m| m.name == node.name) {
            out.push(Violation::DuplicateName { node: name() });
        }
        for p in &node.inputs {
            if p.0 >= net.nodes.len() {
                out.push(Violation::DanglingPredecessor { node: name(), predecessor: p.0 });
            }
        }
        if !arity_ok(node.kind(), node.inputs.len()) {
            out.push(Violation::Arity { node: name(), kind: node.kind(), found: node.inputs.len() });
        }
        if node.spec.stride == 0 && (node.is_conv() || matches!(node.kind(), LayerKind::PoolMax | LayerKind::PoolAvg)) {
            out.push(Violation::BadSpec { node: name(), reason: "stride must be at least 1" });
        }
        if matches!(node.kind(), LayerKind::PoolMax | LayerKind::PoolAvg) && node.spec.kernel == 0 {
            out.push(Violation::BadSpec { node: name(), reason: "pool window must be at least 1" });
        }
        match (&node.weights, node.is_conv()) {
            (None, true) => out.push(Violation::MissingWeights { node: name() }),
            (Some(_), false) => out.push(Violation::UnexpectedWeights { node: name() }),
            (Some(w), true) => {
                let d = w.dims;
                if d.c_out == 0 || d.c_in == 0 || d.kh == 0 || d.kw == 0 {
                    out.push(Violation::BadKernel { node: name(), reason: "weight dims must all be at least 1" });
                }
                if w.data.len() != d.len() {
                    out.push(Violation::WeightLength { node: name(), expected: d.len(), found: w.data.len() });
                }
                if node.kind() == LayerKind::ConvPointwise && (d.kh != 1 || d.kw != 1) {
                    out.push(Violation::BadKernel { node: name(), reason: "pointwise conv needs a 1x1 kernel" });
                }
                if node.kind() == LayerKind::ConvDepthwise && d.c_in != 1 {
                    out.push(Violation::BadKernel { node: name(), reason: "depthwise conv holds one kernel per filter" });
                }
                match (&node.bias, node.spec.has_bias) {
                    (Some(b), true) if b.len() != d.c_out => {
                        out.push(Violation::BiasLength { node: name(), expected: d.c_out, found: b.len() })
                    }
                    (None, true) => out.push(Violation::BiasLength { node: name(), expected: d.c_out, found: 0 }),
                    (Some(b), false) => out.push(Violation::BiasLength { node: name(), expected: 0, found: b.len() }),
                    _ => {}
                }
            }
            (None, false) => {
                if node.bias.is_some() {
                    out.push(Violation::BiasLength { node: name(), expected: 0, found: node.bias.as_ref().map_or(0, Vec::len) });
                }
            }
        }
    }
}

/// Forward shape flow. Records violations and keeps going with each layer's
/// own output width so one bad edge yields one violation.
fn shape_walk(net: &Network, order: &[NodeId], out: &mut Vec<Violation>) -> Vec<Option<ActDims>> {
    let mut dims: Vec<Option<ActDims>> = vec![None; net.nodes.len()];
    for &id in order {
        let node = net.node(id);
        let name = || node.name.clone();
        let preds: Option<Vec<ActDims>> = node
            .inputs
            .iter()
            .map(|p| dims.get(p.0).copied().flatten())
            .collect();
        let result = match node.kind() {
            LayerKind::Input => Some(net.input_dims),
            _ => {
                let Some(preds) = preds else { continue };
                if preds.is_empty() {
                    continue;
                }
                let first = preds[0];
                match node.kind() {
                    LayerKind::Input => unreachable!(),
                    LayerKind::Output | LayerKind::Relu => Some(first),
                    LayerKind::PoolMax | LayerKind::PoolAvg => {
                        let k = node.spec.kernel;
                        match (
                            conv_out_len(first.h, k, node.spec.stride, node.spec.padding),
                            conv_out_len(first.w, k, node.spec.stride, node.spec.padding),
                        ) {
                            (Some(h), Some(w)) => Some(ActDims::new(first.c, h, w)),
                            _ => {
                                out.push(Violation::NonPositiveDim { node: name() });
                                None
                            }
                        }
                    }
                    LayerKind::Concat => {
                        if preds.iter().any(|d| d.h != first.h || d.w != first.w) {
                            out.push(Violation::ConcatSpatial { node: name() });
                            None
                        } else {
                            Some(ActDims::new(preds.iter().map(|d| d.c).sum(), first.h, first.w))
                        }
                    }
                    LayerKind::ConvStandard | LayerKind::ConvPointwise | LayerKind::ConvDepthwise => {
                        let Some(w) = node.weights.as_ref() else { continue };
                        let d = w.dims;
                        let expected = if node.kind() == LayerKind::ConvDepthwise { d.c_out } else { d.c_in };
                        if expected != first.c {
                            out.push(Violation::ShapeMismatch {
                                node: name(),
                                producer: net.node(node.inputs[0]).name.clone(),
                                expected,
                                found: first.c,
                            });
                        }
                        match (
                            conv_out_len(first.h, d.kh, node.spec.stride, node.spec.padding),
                            conv_out_len(first.w, d.kw, node.spec.stride, node.spec.padding),
                        ) {
                            (Some(h), Some(w)) => Some(ActDims::new(d.c_out, h, w)),
                            _ => {
                                out.push(Violation::NonPositiveDim { node: name() });
                                None
                            }
                        }
                    }
                }
            }
        };
        if matches!(result, Some(d) if d.c == 0) {
            out.push(Violation::NonPositiveDim { node: name() });
        }
        dims[id.0] = result;
    }
    dims
}

/// Lists every violated invariant; empty iff the network is well formed.
pub fn validate(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    check_nodes(net, &mut out);
    let dangling = out.iter().any(|v| matches!(v, Violation::DanglingPredecessor { .. }));
    if dangling {
        return out;
    }
    match net.topo_order() {
        Ok(order) => {
            shape_walk(net, &order, &mut out);
        }
        Err(e) => out.push(Violation::Cycle { node: e.node }),
    }
    out
}

/// Output activation dims for every node, indexed by [`NodeId`].
pub fn infer_shapes(net: &Network) -> Result<Vec<ActDims>, ShapeError> {
    let order = net.topo_order()?;
    let mut violations = Vec::new();
    let dims = shape_walk(net, &order, &mut violations);
    if let Some(v) = violations.first() {
        let node = match v {
            Violation::ShapeMismatch { node, .. }
            | Violation::NonPositiveDim { node }
            | Violation::ConcatSpatial { node } => node.clone(),
            _ => String::new(),
        };
        return Err(ShapeError { node, message: v.to_string() });
    }
    dims.into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| ShapeError::new(&net.nodes[i].name, "shape not inferable".into())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Family {
    MobilenetLike,
    SqueezenetLike,
    PlainChain,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MobilenetLike => "mobilenet_like",
            Self::SqueezenetLike => "squeezenet_like",
            Self::PlainChain => "plain_chain",
        }
    }
}

impl FromStr for Family {
    type Err = NnirError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mobilenet_like" | "mobilenet" => Ok(Self::MobilenetLike),
            "squeezenet_like" | "squeezenet" => Ok(Self::SqueezenetLike),
            "plain_chain" | "plain" => Ok(Self::PlainChain),
            other => Err(NnirError::UnsupportedFamily(other.to_string())),
        }
    }
}

/// Parameters of a generated stand-in network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopologySpec {
    pub family: Family,
    pub depth: usize,
    pub base_channels: usize,
    pub seed: u64,
}

/// Classifier width of generated networks. A multiple of the default lane
/// width, so the tail never counts as a misaligned layer.
pub const SYNTH_CLASSES: usize = 8;

/// Spatial side of generated network inputs.
pub const SYNTH_INPUT_HW: usize = 16;

/// Incremental network construction with seeded uniform weights in
/// `[-0.5, 0.5]`.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    input_dims: ActDims,
    rng: ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(input_dims: ActDims, seed: u64) -> Self {
        let input = Node {
            name: "input".into(),
            spec: LayerSpec::of(LayerKind::Input),
            weights: None,
            bias: None,
            inputs: Vec::new(),
        };
        Self { nodes: vec![input], input_dims, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn uniform(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.rng.random_range(-0.5f32..=0.5)).collect()
    }

    /// Adds a conv with random weights. `c_in` is ignored for depthwise.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        kind: LayerKind,
        from: NodeId,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
    ) -> NodeId {
        let c_in = if kind == LayerKind::ConvDepthwise { 1 } else { c_in };
        let dims = WeightDims::new(c_out, c_in, k, k);
        let data = self.uniform(dims.len());
        let bias = has_bias.then(|| self.uniform(c_out));
        self.push(Node {
            name: name.into(),
            spec: LayerSpec::conv(kind, stride, padding, has_bias),
            weights: Some(Weights::new(dims, data)),
            bias,
            inputs: vec![from],
        })
    }

    pub fn layer(&mut self, name: &str, spec: LayerSpec, inputs: Vec<NodeId>) -> NodeId {
        self.push(Node { name: name.into(), spec, weights: None, bias: None, inputs })
    }

    pub fn relu(&mut self, name: &str, from: NodeId) -> NodeId {
        self.layer(name, LayerSpec::of(LayerKind::Relu), vec![from])
    }

    pub fn finish(mut self, from: NodeId) -> Network {
        self.layer("output", LayerSpec::of(LayerKind::Output), vec![from]);
        Network { nodes: self.nodes, input_dims: self.input_dims }
    }
}

/// Widths of the pointwise convs in a mobilenet-like stack: doubling every
/// second block, starting at `2·base`.
pub fn mobilenet_widths(depth: usize, base: usize) -> Vec<usize> {
    (1..=depth).map(|i| base << (i + 1) / 2).collect()
}

/// Generates a deterministic stand-in backbone with a global-average-pool and
/// pointwise classifier tail.
pub fn synth_model(spec: &TopologySpec) -> Result<Network, NnirError> {
    if spec.depth == 0 {
        return Err(NnirError::InvalidTopology("depth must be positive"));
    }
    if spec.base_channels == 0 {
        return Err(NnirError::InvalidTopology("base_channels must be positive"));
    }
    let hw = SYNTH_INPUT_HW;
    let mut b = NetworkBuilder::new(ActDims::new(3, hw, hw), spec.seed);
    let base = spec.base_channels;
    let (last, width, spatial) = match spec.family {
        Family::PlainChain => {
            // `depth` convs in total; the final one is the classifier.
            let mut prev = b.input();
            let mut c_prev = 3;
            for i in 0..spec.depth.saturating_sub(1) {
                let width = base << (i / 2);
                let conv = b.conv(&format!("conv{i}"), LayerKind::ConvStandard, prev, width, c_prev, 3, 1, 1, true);
                prev = b.relu(&format!("conv{i}/relu"), conv);
                c_prev = width;
            }
            (prev, c_prev, hw)
        }
        Family::MobilenetLike => {
            let conv0 = b.conv("conv0", LayerKind::ConvStandard, b.input(), base, 3, 3, 2, 1, true);
            let mut prev = b.relu("conv0/relu", conv0);
            let mut spatial = conv_out_len(hw, 3, 2, 1).unwrap_or(1);
            let mut c_prev = base;
            for (i, width) in mobilenet_widths(spec.depth, base).into_iter().enumerate() {
                let i = i + 1;
                let stride = if i % 2 == 0 && spatial >= 4 { 2 } else { 1 };
                let dw = b.conv(&format!("conv{i}/dw"), LayerKind::ConvDepthwise, prev, c_prev, 1, 3, stride, 1, true);
                spatial = conv_out_len(spatial, 3, stride, 1).unwrap_or(1);
                let dw_relu = b.relu(&format!("conv{i}/dw/relu"), dw);
                let pw = b.conv(&format!("conv{i}"), LayerKind::ConvPointwise, dw_relu, width, c_prev, 1, 1, 0, true);
                prev = b.relu(&format!("conv{i}/relu"), pw);
                c_prev = width;
            }
            (prev, c_prev, spatial)
        }
        Family::SqueezenetLike => {
            let stem = base * 2;
            let conv0 = b.conv("conv0", LayerKind::ConvStandard, b.input(), stem, 3, 3, 2, 1, true);
            let mut prev = b.relu("conv0/relu", conv0);
            let spatial = conv_out_len(hw, 3, 2, 1).unwrap_or(1);
            let mut c_prev = stem;
            for i in 1..=spec.depth {
                let squeeze = base * (1 + (i - 1) / 2);
                let expand = 2 * squeeze;
                let f = i + 1;
                let sq = b.conv(&format!("fire{f}/squeeze1x1"), LayerKind::ConvPointwise, prev, squeeze, c_prev, 1, 1, 0, true);
                let sq_relu = b.relu(&format!("fire{f}/squeeze1x1/relu"), sq);
                let e1 = b.conv(&format!("fire{f}/expand1x1"), LayerKind::ConvPointwise, sq_relu, expand, squeeze, 1, 1, 0, true);
                let e3 = b.conv(&format!("fire{f}/expand3x3"), LayerKind::ConvStandard, sq_relu, expand, squeeze, 3, 1, 1, true);
                let cat = b.layer(&format!("fire{f}/concat"), LayerSpec::of(LayerKind::Concat), vec![e1, e3]);
                prev = b.relu(&format!("fire{f}/relu"), cat);
                c_prev = 2 * expand;
            }
            (prev, c_prev, spatial)
        }
    };
    let pool = b.layer("pool", LayerSpec::pool(LayerKind::PoolAvg, spatial, 1, 0), vec![last]);
    let cls = b.conv("classifier", LayerKind::ConvPointwise, pool, SYNTH_CLASSES, width, 1, 1, 0, true);
    Ok(b.finish(cls))
}

/// Pointwise widths `(c_out, c_in)` of the MobileNet-v1 backbone, conv1..conv10.
pub const MOBILENET_V1_POINTWISE: [(usize, usize); 10] = [
    (64, 32),
    (128, 64),
    (128, 128),
    (256, 128),
    (256, 256),
    (512, 256),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
];

/// MobileNet-v1 backbone through conv10: a 3×3 stride-2 `conv0` with 32
/// filters, then `conv{i}/dw` + `conv{i}` pairs, then a pooled pointwise
/// classifier. No bias, matching folded deployment graphs.
pub fn mobilenet_v1_backbone(input_hw: usize, seed: u64) -> Network {
    let mut b = NetworkBuilder::new(ActDims::new(3, input_hw, input_hw), seed);
    let conv0 = b.conv("conv0", LayerKind::ConvStandard, b.input(), 32, 3, 3, 2, 1, false);
    let mut prev = b.relu("conv0/relu", conv0);
    let mut spatial = conv_out_len(input_hw, 3, 2, 1).unwrap_or(1);
    let mut c_prev = 32;
    for (i, &(c_out, c_in)) in MOBILENET_V1_POINTWISE.iter().enumerate() {
        let i = i + 1;
        debug_assert_eq!(c_in, c_prev);
        let stride = if matches!(i, 2 | 4 | 6) && spatial >= 2 { 2 } else { 1 };
        let dw = b.conv(&format!("conv{i}/dw"), LayerKind::ConvDepthwise, prev, c_prev, 1, 3, stride, 1, false);
        spatial = conv_out_len(spatial, 3, stride, 1).unwrap_or(1);
        let dw_relu = b.relu(&format!("conv{i}/dw/relu"), dw);
        let pw = b.conv(&format!("conv{i}"), LayerKind::ConvPointwise, dw_relu, c_out, c_in, 1, 1, 0, false);
        prev = b.relu(&format!("conv{i}/relu"), pw);
        c_prev = c_out;
    }
    let pool = b.layer("pool", LayerSpec::pool(LayerKind::PoolAvg, spatial, 1, 0), vec![prev]);
    let cls = b.conv("classifier", LayerKind::ConvPointwise, pool, SYNTH_CLASSES, c_prev, 1, 1, 0, false);
    b.finish(cls)
}
