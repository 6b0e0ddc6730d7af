//! Reference forward inference, MAC/parameter accounting and the fidelity
//! proxy.
//!
//! Convolution is direct (no im2col), accumulated in `f64` and stored as
//! `f32`. The fidelity proxy compares a candidate network against an unpruned
//! reference on a seeded synthetic probe set: argmax agreement plus mean
//! absolute output deviation. It stands in for task accuracy, on the
//! assumption that filters which matter less perturb outputs less.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nnir::{infer_shapes, ActDims, LayerKind, Network, Node, NodeId, ShapeError};

/// Default probe count for fidelity evaluation.
pub const DEFAULT_PROBE_COUNT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub dims: ActDims,
    pub values: Vec<f32>,
}

impl Activation {
    pub fn new(dims: ActDims, values: Vec<f32>) -> Self {
        debug_assert_eq!(dims.len(), values.len());
        Self { dims, values }
    }

    pub fn zeros(dims: ActDims) -> Self {
        Self { dims, values: vec![0.0; dims.len()] }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.dims.plane();
        &self.values[c * plane..(c + 1) * plane]
    }

    /// Index of the channel with the largest spatial mean; ties go to the
    /// lowest index.
    pub fn argmax_channel(&self) -> usize {
        let mut best = 0;
        let mut best_sum = f64::NEG_INFINITY;
        for c in 0..self.dims.c {
            let sum: f64 = self.channel(c).iter().map(|&v| f64::from(v)).sum();
            if sum > best_sum {
                best_sum = sum;
                best = c;
            }
        }
        best
    }
}

/// Synthetic inputs standing in for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub inputs: Vec<Activation>,
    pub seed: u64,
}

impl ProbeSet {
    /// `count` inputs drawn uniformly from `[0, 1)`, reproducible from
    /// `(seed, count, dims)`.
    pub fn generate(seed: u64, count: usize, dims: ActDims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..count)
            .map(|_| Activation::new(dims, (0..dims.len()).map(|_| rng.random::<f32>()).collect()))
            .collect();
        Self { inputs, seed }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    DimensionMismatch { expected: ActDims, found: ActDims },
    NonFinite { node: String },
    Shape(ShapeError),
    OutputMismatch { reference: ActDims, candidate: ActDims },
    EmptyProbes,
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, found } => {
                write!(f, "input dims {found} do not match network input {expected}")
            }
            Self::NonFinite { node } => write!(f, "non-finite activation produced by `{node}`"),
            Self::Shape(e) => e.fmt(f),
            Self::OutputMismatch { reference, candidate } => {
                write!(f, "output dims differ: reference {reference}, candidate {candidate}")
            }
            Self::EmptyProbes => f.write_str("probe set is empty"),
        }
    }
}

impl From<ShapeError> for EngineError {
    fn from(e: ShapeError) -> Self {
        Self::Shape(e)
    }
}

fn conv(node: &Node, input: &Activation, out_dims: ActDims) -> Vec<f32> {
    let w = node.weights.as_ref().expect("validated conv has weights");
    let d = w.dims;
    let (stride, pad) = (node.spec.stride as isize, node.spec.padding as isize);
    let (ih, iw) = (input.dims.h as isize, input.dims.w as isize);
    let depthwise = node.kind() == LayerKind::ConvDepthwise;
    let mut out = vec![0f32; out_dims.len()];
    let plane = out_dims.plane();
    for o in 0..d.c_out {
        let filter = w.filter(o);
        let bias = node.bias.as_ref().map_or(0.0, |b| f64::from(b[o]));
        for y in 0..out_dims.h {
            for x in 0..out_dims.w {
                let mut acc = bias;
                let y0 = y as isize * stride - pad;
                let x0 = x as isize * stride - pad;
                let mut tap = |c_in_slot: usize, c: usize| {
                    let kernel = &filter[c_in_slot * d.kh * d.kw..(c_in_slot + 1) * d.kh * d.kw];
                    let chan = input.channel(c);
                    for ky in 0..d.kh {
                        let iy = y0 + ky as isize;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ix = x0 + kx as isize;
                            if ix < 0 || ix >= iw {
                                continue;
                            }
                            acc += f64::from(kernel[ky * d.kw + kx])
                                * f64::from(chan[iy as usize * input.dims.w + ix as usize]);
                        }
                    }
                };
                if depthwise {
                    tap(0, o);
                } else {
                    for c in 0..d.c_in {
                        tap(c, c);
                    }
                }
                out[o * plane + y * out_dims.w + x] = acc as f32;
            }
        }
    }
    out
}

fn pool(node: &Node, input: &Activation, out_dims: ActDims) -> Vec<f32> {
    let k = node.spec.kernel as isize;
    let (stride, pad) = (node.spec.stride as isize, node.spec.padding as isize);
    let (ih, iw) = (input.dims.h as isize, input.dims.w as isize);
    let max = node.kind() == LayerKind::PoolMax;
    let mut out = Vec::with_capacity(out_dims.len());
    for c in 0..out_dims.c {
        let chan = input.channel(c);
        for y in 0..out_dims.h as isize {
            for x in 0..out_dims.w as isize {
                let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
                let mut n = 0usize;
                for iy in (y * stride - pad..y * stride - pad + k).filter(|&v| v >= 0 && v < ih) {
                    for ix in (x * stride - pad..x * stride - pad + k).filter(|&v| v >= 0 && v < iw) {
                        let v = f64::from(chan[(iy * iw + ix) as usize]);
                        acc = if max { acc.max(v) } else { acc + v };
                        n += 1;
                    }
                }
                let v = if max { acc } else { acc / n.max(1) as f64 };
                out.push(v as f32);
            }
        }
    }
    out
}

/// Runs one input through the network.
pub fn forward(net: &Network, input: &Activation) -> Result<Activation, EngineError> {
    if input.dims != net.input_dims || input.values.len() != input.dims.len() {
        return Err(EngineError::DimensionMismatch { expected: net.input_dims, found: input.dims });
    }
    let shapes = infer_shapes(net)?;
    let order = net.topo_order()?;
    forward_with(net, &shapes, &order, input)
}

fn forward_with(
    net: &Network,
    shapes: &[ActDims],
    order: &[NodeId],
    input: &Activation,
) -> Result<Activation, EngineError> {
    let mut acts: Vec<Option<Activation>> = vec![None; net.nodes.len()];
    // Remaining consumer count per node so activations can be dropped early.
    let mut pending: Vec<usize> = vec![0; net.nodes.len()];
    for node in &net.nodes {
        for p in &node.inputs {
            pending[p.0] += 1;
        }
    }
    let mut output = None;
    for &id in order {
        let node = net.node(id);
        let dims = shapes[id.0];
        let pred = |i: usize| acts[node.inputs[i].0].as_ref().expect("topological order");
        let values = match node.kind() {
            LayerKind::Input => input.values.clone(),
            LayerKind::Output => pred(0).values.clone(),
            LayerKind::Relu => pred(0).values.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::PoolMax | LayerKind::PoolAvg => pool(node, pred(0), dims),
            LayerKind::Concat => {
                let mut v = Vec::with_capacity(dims.len());
                for i in 0..node.inputs.len() {
                    v.extend_from_slice(&pred(i).values);
                }
                v
            }
            LayerKind::ConvStandard | LayerKind::ConvDepthwise | LayerKind::ConvPointwise => {
                let v = conv(node, pred(0), dims);
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EngineError::NonFinite { node: node.name.clone() });
                }
                v
            }
        };
        for p in &node.inputs {
            pending[p.0] -= 1;
            if pending[p.0] == 0 {
                acts[p.0] = None;
            }
        }
        let act = Activation::new(dims, values);
        if node.kind() == LayerKind::Output {
            output = Some(act);
        } else {
            acts[id.0] = Some(act);
        }
    }
    output.ok_or_else(|| EngineError::Shape(ShapeError::new("output", "network has no output node".into())))
}

/// Forward over every probe, in probe order.
pub fn forward_all(net: &Network, probes: &ProbeSet) -> Result<Vec<Activation>, EngineError> {
    let shapes = infer_shapes(net)?;
    let order = net.topo_order()?;
    probes
        .inputs
        .iter()
        .map(|input| {
            if input.dims != net.input_dims {
                return Err(EngineError::DimensionMismatch { expected: net.input_dims, found: input.dims });
            }
            forward_with(net, &shapes, &order, input)
        })
        .collect()
}

/// Per-layer MAC counts plus the total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub total: u64,
    pub per_layer: Vec<(NodeId, u64)>,
}

/// Standard conv: `H_out·W_out·C_out·C_in·kh·kw`; depthwise:
/// `H_out·W_out·C·kh·kw`. Padded taps are counted.
pub fn count_macs(net: &Network) -> Result<MacReport, ShapeError> {
    let shapes = infer_shapes(net)?;
    let per_layer: Vec<(NodeId, u64)> = net
        .ids()
        .filter_map(|id| {
            let w = net.node(id).weight_dims()?;
            let out = shapes[id.0];
            // Depthwise weights already carry c_in = 1.
            Some((id, (out.plane() * w.c_out * w.c_in * w.kh * w.kw) as u64))
        })
        .collect();
    Ok(MacReport { total: per_layer.iter().map(|(_, m)| m).sum(), per_layer })
}

pub fn layer_params(node: &Node) -> u64 {
    let w = node.weights.as_ref().map_or(0, |w| w.data.len());
    let b = node.bias.as_ref().map_or(0, Vec::len);
    (w + b) as u64
}

/// Weight plus bias element count over all conv nodes.
pub fn count_params(net: &Network) -> u64 {
    net.nodes.iter().map(layer_params).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidelityReport {
    pub argmax_agreement: f64,
    pub mean_abs_deviation: f64,
    pub probe_count: usize,
}

impl FidelityReport {
    pub const PERFECT: Self = Self { argmax_agreement: 1.0, mean_abs_deviation: 0.0, probe_count: 0 };
}

/// Cached reference outputs for repeated fidelity checks against one network.
#[derive(Debug, Clone)]
pub struct ReferenceOutputs {
    outputs: Vec<Activation>,
    argmax: Vec<usize>,
}

impl ReferenceOutputs {
    pub fn compute(reference: &Network, probes: &ProbeSet) -> Result<Self, EngineError> {
        if probes.is_empty() {
            return Err(EngineError::EmptyProbes);
        }
        let outputs = forward_all(reference, probes)?;
        let argmax = outputs.iter().map(Activation::argmax_channel).collect();
        Ok(Self { outputs, argmax })
    }

    pub fn outputs(&self) -> &[Activation] {
        &self.outputs
    }

    /// Compares `candidate` on the same probes the reference was run on.
    pub fn compare(&self, candidate: &Network, probes: &ProbeSet) -> Result<FidelityReport, EngineError> {
        let cand = forward_all(candidate, probes)?;
        let mut agree = 0usize;
        let mut dev = 0f64;
        let mut elements = 0usize;
        for (i, (r, c)) in self.outputs.iter().zip(&cand).enumerate() {
            if r.dims != c.dims {
                return Err(EngineError::OutputMismatch { reference: r.dims, candidate: c.dims });
            }
            if self.argmax[i] == c.argmax_channel() {
                agree += 1;
            }
            dev += r.values.iter().zip(&c.values).map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs()).sum::<f64>();
            elements += r.values.len();
        }
        Ok(FidelityReport {
            argmax_agreement: agree as f64 / cand.len() as f64,
            mean_abs_deviation: if elements == 0 { 0.0 } else { dev / elements as f64 },
            probe_count: cand.len(),
        })
    }
}

/// Argmax agreement and mean absolute deviation of `candidate` against
/// `reference` over `probes`.
pub fn fidelity(reference: &Network, candidate: &Network, probes: &ProbeSet) -> Result<FidelityReport, EngineError> {
    ReferenceOutputs::compute(reference, probes)?.compare(candidate, probes)
}
