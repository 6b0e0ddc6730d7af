//! Hardware response backends.
//!
//! Spatial (data-flow) accelerators process channels in fixed-width lanes and
//! penalize channel counts that do not fill a lane; temporal (SIMD/SIMT)
//! machines scale smoothly with work. [`LaneAlignedModel`] and
//! [`TemporalModel`] are analytic stand-ins for the two; [`MeasuredTrace`]
//! replays recorded device latencies without interpolation.
//! [`AccuracyResponseModel`] is a synthetic emulation of compilers whose
//! accuracy drops on misaligned layers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::engine::FidelityReport;
use crate::nnir::{infer_shapes, LayerKind, Network, NodeId, ShapeError};

/// Shape facts a latency model needs about one conv layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerWork {
    pub node: NodeId,
    pub name: String,
    pub kind: LayerKind,
    /// Input channel count (channel count for depthwise).
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl LayerWork {
    /// `H_out · W_out · kh · kw`.
    pub fn work(&self) -> u64 {
        (self.h_out * self.w_out * self.kh * self.kw) as u64
    }

    pub fn macs(&self) -> u64 {
        if self.kind == LayerKind::ConvDepthwise {
            self.work() * self.c_out as u64
        } else {
            self.work() * (self.c_out * self.c_in) as u64
        }
    }
}

/// Conv layers of `net` in node order.
pub fn layer_works(net: &Network) -> Result<Vec<LayerWork>, ShapeError> {
    let shapes = infer_shapes(net)?;
    Ok(net
        .ids()
        .filter_map(|id| {
            let node = net.node(id);
            let d = node.weight_dims()?;
            let out = shapes[id.0];
            let c_in = if node.kind() == LayerKind::ConvDepthwise { d.c_out } else { d.c_in };
            Some(LayerWork {
                node: id,
                name: node.name.clone(),
                kind: node.kind(),
                c_in,
                c_out: d.c_out,
                kh: d.kh,
                kw: d.kw,
                h_out: out.h,
                w_out: out.w,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum HwError {
    MissingKey { layer: String, c_out: usize },
    InvalidParameter(&'static str),
    Shape(ShapeError),
}

impl fmt::Display for HwError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingKey { layer, c_out } => {
                write!(f, "measured trace has no latency for layer `{layer}` with {c_out} filters")
            }
            Self::InvalidParameter(msg) => write!(f, "invalid hardware model parameter: {msg}"),
            Self::Shape(e) => e.fmt(f),
        }
    }
}

impl From<ShapeError> for HwError {
    fn from(e: ShapeError) -> Self {
        Self::Shape(e)
    }
}

/// Whole-network latency with its breakdown. `total_ms` is the exact sum of
/// the breakdown entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLatency {
    pub total_ms: f64,
    pub per_layer: Vec<(String, f64)>,
}

pub trait LatencyModel {
    fn layer_latency(&self, layer: &LayerWork) -> Result<f64, HwError>;

    /// Sum of conv-layer latencies; non-conv nodes cost nothing.
    fn network_latency(&self, net: &Network) -> Result<NetworkLatency, HwError> {
        let mut per_layer = Vec::new();
        let mut total_ms = 0.0;
        for layer in layer_works(net)? {
            let t = self.layer_latency(&layer)?;
            total_ms += t;
            per_layer.push((layer.name, t));
        }
        Ok(NetworkLatency { total_ms, per_layer })
    }

    /// Whole-network latency while `layer` is being swept.
    fn sweep_latency(&self, net: &Network, layer: NodeId) -> Result<f64, HwError> {
        let _ = layer;
        Ok(self.network_latency(net)?.total_ms)
    }
}

impl<M: LatencyModel + ?Sized> LatencyModel for &M {
    fn layer_latency(&self, layer: &LayerWork) -> Result<f64, HwError> {
        (**self).layer_latency(layer)
    }

    fn network_latency(&self, net: &Network) -> Result<NetworkLatency, HwError> {
        (**self).network_latency(net)
    }

    fn sweep_latency(&self, net: &Network, layer: NodeId) -> Result<f64, HwError> {
        (**self).sweep_latency(net, layer)
    }
}

/// Lane-aligned spatial accelerator:
///
/// `t = c0 + work · [c1 · ⌈C_in/L⌉ · ⌈C_out/L⌉ + c2 · (mis(C_in) + mis(C_out))]`
///
/// with `mis(n) = 1` iff `n` is not a multiple of `L`. Depthwise layers have
/// no cross-channel reduction and use `c1 · ⌈C/L⌉ + c2 · 2 · mis(C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaneAlignedModel {
    pub lane_width: usize,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LaneAlignedModel {
    fn default() -> Self {
        Self { lane_width: 8, c0: 0.05, c1: 2e-7, c2: 1e-5 }
    }
}

impl LaneAlignedModel {
    pub fn new(lane_width: usize, c0: f64, c1: f64, c2: f64) -> Result<Self, HwError> {
        if lane_width == 0 {
            return Err(HwError::InvalidParameter("lane width must be at least 1"));
        }
        if !(c0 >= 0.0 && c1 >= 0.0 && c2 >= 0.0) || !(c0 + c1 + c2).is_finite() {
            return Err(HwError::InvalidParameter("c0, c1, c2 must be finite and non-negative"));
        }
        Ok(Self { lane_width, c0, c1, c2 })
    }

    fn lanes(&self, n: usize) -> f64 {
        n.div_ceil(self.lane_width) as f64
    }

    fn mis(&self, n: usize) -> f64 {
        if n % self.lane_width == 0 {
            0.0
        } else {
            1.0
        }
    }
}

impl LatencyModel for LaneAlignedModel {
    fn layer_latency(&self, l: &LayerWork) -> Result<f64, HwError> {
        let per_unit = if l.kind == LayerKind::ConvDepthwise {
            self.c1 * self.lanes(l.c_out) + self.c2 * 2.0 * self.mis(l.c_out)
        } else {
            self.c1 * self.lanes(l.c_in) * self.lanes(l.c_out) + self.c2 * (self.mis(l.c_in) + self.mis(l.c_out))
        };
        Ok(self.c0 + l.work() as f64 * per_unit)
    }
}

/// Temporal (SIMD/SIMT) machine: `t = c0 + c1 · MACs · (1 + jitter · u)`
/// where `u ∈ [-1, 1)` is a deterministic draw keyed by
/// `(seed, layer name, C_in, C_out)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemporalModel {
    pub c0: f64,
    pub c1: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for TemporalModel {
    fn default() -> Self {
        Self { c0: 0.05, c1: 2e-7, jitter: 0.0, seed: 0 }
    }
}

impl TemporalModel {
    pub fn new(c0: f64, c1: f64, jitter: f64, seed: u64) -> Result<Self, HwError> {
        if !(c0 >= 0.0 && c1 >= 0.0) || !(c0 + c1).is_finite() {
            return Err(HwError::InvalidParameter("c0 and c1 must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&jitter) {
            return Err(HwError::InvalidParameter("jitter must lie in [0, 1)"));
        }
        Ok(Self { c0, c1, jitter, seed })
    }

    fn draw(&self, l: &LayerWork) -> f64 {
        let mut h = splitmix(self.seed);
        for b in l.name.bytes() {
            h = splitmix(h ^ u64::from(b));
        }
        h = splitmix(h ^ l.c_in as u64);
        h = splitmix(h ^ ((l.c_out as u64) << 32));
        // 53 high bits → [0, 1) → [-1, 1).
        ((h >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl LatencyModel for TemporalModel {
    fn layer_latency(&self, l: &LayerWork) -> Result<f64, HwError> {
        let factor = if self.jitter == 0.0 { 1.0 } else { 1.0 + self.jitter * self.draw(l) };
        Ok(self.c0 + self.c1 * l.macs() as f64 * factor)
    }
}

/// Layer id used for whole-network rows of a measured trace.
pub const WHOLE_NETWORK: &str = "*";

/// Recorded latencies keyed by `(layer name, filters remaining)`.
///
/// Whole-network rows use layer [`WHOLE_NETWORK`] and are keyed by the
/// network's total conv filter count. When any such row exists,
/// [`LatencyModel::network_latency`] answers from those rows only; otherwise
/// rows are per-layer latencies and are summed.
///
/// During a single-layer sweep the swept layer's rows are read as
/// whole-network latencies, the shape a device-side sweep records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredTrace {
    table: BTreeMap<(String, usize), f64>,
}

impl MeasuredTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: &str, filters_remaining: usize, latency_ms: f64) {
        self.table.insert((layer.to_string(), filters_remaining), latency_ms);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, usize, f64)> + '_ {
        self.table.iter().map(|((l, n), t)| (l.as_str(), *n, *t))
    }

    fn lookup(&self, layer: &str, c_out: usize) -> Result<f64, HwError> {
        self.table
            .get(&(layer.to_string(), c_out))
            .copied()
            .ok_or_else(|| HwError::MissingKey { layer: layer.to_string(), c_out })
    }

    fn has_whole_network_rows(&self) -> bool {
        self.table.keys().any(|(l, _)| l == WHOLE_NETWORK)
    }
}

impl LatencyModel for MeasuredTrace {
    fn layer_latency(&self, l: &LayerWork) -> Result<f64, HwError> {
        self.lookup(&l.name, l.c_out)
    }

    fn network_latency(&self, net: &Network) -> Result<NetworkLatency, HwError> {
        if self.has_whole_network_rows() {
            let t = self.lookup(WHOLE_NETWORK, net.total_filters())?;
            return Ok(NetworkLatency { total_ms: t, per_layer: alloc::vec![(WHOLE_NETWORK.to_string(), t)] });
        }
        let mut per_layer = Vec::new();
        let mut total_ms = 0.0;
        for layer in layer_works(net)? {
            let t = self.lookup(&layer.name, layer.c_out)?;
            total_ms += t;
            per_layer.push((layer.name, t));
        }
        Ok(NetworkLatency { total_ms, per_layer })
    }

    fn sweep_latency(&self, net: &Network, layer: NodeId) -> Result<f64, HwError> {
        if self.has_whole_network_rows() {
            return self.lookup(WHOLE_NETWORK, net.total_filters());
        }
        let node = net.node(layer);
        self.lookup(&node.name, node.c_out().unwrap_or(0))
    }
}

/// Synthetic accuracy response: every conv layer whose filter count is not a
/// multiple of `lane_width` costs `delta` of argmax agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyResponseModel {
    pub delta: f64,
    pub lane_width: usize,
}

impl Default for AccuracyResponseModel {
    fn default() -> Self {
        Self { delta: 0.0, lane_width: 8 }
    }
}

impl AccuracyResponseModel {
    pub fn new(delta: f64, lane_width: usize) -> Result<Self, HwError> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(HwError::InvalidParameter("delta must be finite and non-negative"));
        }
        if lane_width == 0 {
            return Err(HwError::InvalidParameter("lane width must be at least 1"));
        }
        Ok(Self { delta, lane_width })
    }

    pub fn misaligned_layers(&self, net: &Network) -> usize {
        net.nodes
            .iter()
            .filter_map(|n| n.c_out())
            .filter(|c| c % self.lane_width != 0)
            .count()
    }

    /// `agreement' = max(0, agreement − δ·m)`; deviation unchanged.
    pub fn adjusted_fidelity(&self, net: &Network, base: FidelityReport) -> FidelityReport {
        let m = self.misaligned_layers(net) as f64;
        FidelityReport {
            argmax_agreement: (base.argmax_agreement - self.delta * m).clamp(0.0, 1.0),
            ..base
        }
    }
}
