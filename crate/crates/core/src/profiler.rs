//! Single-layer pruning sweeps, period detection and optimal cluster size.
//!
//! A sweep prunes one layer a filter at a time (lowest score first) and
//! records whole-network latency and adjusted fidelity after every removal.
//! Periods are found by residue-class contrast: after removing a least-squares
//! line, the mean local contrast at `filters_remaining ≡ 0 (mod p)` is compared
//! with the mean of all other points. Latency is searched for bottoms and
//! fidelity for peaks. The cluster size of a layer is the LCM of the two.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{EngineError, ProbeSet, ReferenceOutputs};
use crate::hwmodel::{AccuracyResponseModel, HwError, LatencyModel};
use crate::nnir::{LayerKind, Network, NodeId};
use crate::pruner::{remove_filters, PruneError, PruneRequest, DEFAULT_MIN_REMAINING};
use crate::ranking::{rank_layer, RankError};

/// Fewest points [`detect_period`] accepts.
pub const MIN_DETECT_POINTS: usize = 8;
/// Fewest points a sweep must produce.
pub const MIN_SWEEP_POINTS: usize = 4;
/// Default acceptance threshold θ, in units of residual standard deviation.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub filters_remaining: usize,
    pub latency_ms: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepTrace {
    pub layer: NodeId,
    pub layer_name: String,
    /// `filters_remaining` strictly decreasing by one per point.
    pub points: Vec<SweepPoint>,
}

impl SweepTrace {
    pub fn latency_series(&self) -> Vec<(usize, f64)> {
        self.points.iter().map(|p| (p.filters_remaining, p.latency_ms)).collect()
    }

    pub fn fidelity_series(&self) -> Vec<(usize, f64)> {
        self.points.iter().map(|p| (p.filters_remaining, p.fidelity)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Bottoms,
    Peaks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodDetection {
    pub period: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeriodEstimate {
    pub p_lat: usize,
    pub p_acc: usize,
    /// `lcm(p_acc, p_lat)`.
    pub cluster_size: usize,
    pub lat_confidence: f64,
    pub acc_confidence: f64,
    pub skipped: bool,
}

impl PeriodEstimate {
    pub const SKIPPED: Self =
        Self { p_lat: 1, p_acc: 1, cluster_size: 1, lat_confidence: 0.0, acc_confidence: 0.0, skipped: true };
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileError {
    LayerTooSmall { layer: String, c_out: usize, needed: usize },
    SeriesTooShort { len: usize },
    NotConv { layer: NodeId },
    Prune(PruneError),
    Engine(EngineError),
    Hw(HwError),
}

impl fmt::Display for ProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LayerTooSmall { layer, c_out, needed } => {
                write!(f, "layer `{layer}` has {c_out} filters; sweeping needs at least {needed}")
            }
            Self::SeriesTooShort { len } => {
                write!(f, "series has {len} points; period detection needs at least {MIN_DETECT_POINTS}")
            }
            Self::NotConv { layer } => write!(f, "node {layer} is not a prunable conv"),
            Self::Prune(e) => e.fmt(f),
            Self::Engine(e) => e.fmt(f),
            Self::Hw(e) => e.fmt(f),
        }
    }
}

impl From<PruneError> for ProfileError {
    fn from(e: PruneError) -> Self {
        Self::Prune(e)
    }
}

impl From<EngineError> for ProfileError {
    fn from(e: EngineError) -> Self {
        Self::Engine(e)
    }
}

impl From<HwError> for ProfileError {
    fn from(e: HwError) -> Self {
        Self::Hw(e)
    }
}

impl From<RankError> for ProfileError {
    fn from(e: RankError) -> Self {
        match e {
            RankError::NotConv { layer } | RankError::UnknownLayer { layer } => Self::NotConv { layer },
            RankError::InvalidClusterSize => unreachable!("sweeps never form clusters"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub min_remaining: usize,
    pub threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { min_remaining: DEFAULT_MIN_REMAINING, threshold: DEFAULT_THRESHOLD }
    }
}

/// Prunes `layer` one lowest-score filter at a time down to
/// `cfg.min_remaining`, recording latency and adjusted fidelity after each
/// removal. `net` is not modified.
pub fn sweep_layer(
    net: &Network,
    layer: NodeId,
    latency: &dyn LatencyModel,
    accuracy: &AccuracyResponseModel,
    probes: &ProbeSet,
    cfg: &SweepConfig,
) -> Result<SweepTrace, ProfileError> {
    let reference = ReferenceOutputs::compute(net, probes)?;
    sweep_with_reference(net, layer, latency, accuracy, probes, &reference, cfg)
}

fn sweep_with_reference(
    net: &Network,
    layer: NodeId,
    latency: &dyn LatencyModel,
    accuracy: &AccuracyResponseModel,
    probes: &ProbeSet,
    reference: &ReferenceOutputs,
    cfg: &SweepConfig,
) -> Result<SweepTrace, ProfileError> {
    let node = net.get(layer).ok_or(ProfileError::NotConv { layer })?;
    if !matches!(node.kind(), LayerKind::ConvStandard | LayerKind::ConvPointwise) {
        return Err(ProfileError::NotConv { layer });
    }
    let c_out = node.c_out().unwrap_or(0);
    let min_remaining = cfg.min_remaining.max(1);
    let needed = min_remaining + MIN_SWEEP_POINTS;
    if c_out < needed {
        return Err(ProfileError::LayerTooSmall { layer: node.name.clone(), c_out, needed });
    }
    let mut current = net.clone();
    let mut points = Vec::with_capacity(c_out - min_remaining);
    for remaining in (min_remaining..c_out).rev() {
        let lowest = rank_layer(&current, layer)?[0].filter.index;
        current = remove_filters(&current, &PruneRequest::new(layer, alloc::vec![lowest]), min_remaining)?.0;
        let t = latency.sweep_latency(&current, layer)?;
        let fid = accuracy.adjusted_fidelity(&current, reference.compare(&current, probes)?);
        points.push(SweepPoint { filters_remaining: remaining, latency_ms: t, fidelity: fid.argmax_agreement });
    }
    Ok(SweepTrace { layer, layer_name: node.name.clone(), points })
}

/// Least-squares residuals of `y` against `x`.
fn detrend(points: &[(usize, f64)]) -> Vec<f64> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.0 as f64 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    points.iter().map(|p| p.1 - my - slope * (p.0 as f64 - mx)).collect()
}

/// Candidate periods need this many points on their residue class; one or
/// two points cannot establish a repetition.
pub const MIN_CLASS_MEMBERS: usize = 3;

/// Finds the period of bottoms (or peaks) in a series indexed by
/// `filters_remaining`.
///
/// The series is detrended by a least-squares line and each residual is
/// replaced by its local contrast, the residual minus the mean of its two
/// neighbours. For each candidate `p` in `2..=n/2` with at least
/// [`MIN_CLASS_MEMBERS`] points on `x ≡ 0 (mod p)`, the score is the mean
/// contrast on that class minus the mean contrast elsewhere (negated for
/// bottoms). The best `p` is replaced by its smallest divisor scoring within
/// one standard error of it, then accepted when its score exceeds
/// `threshold · σ_residual`; exact ties go to the smaller `p`. Otherwise the
/// period is 1. Confidence is `score / σ_residual`, floored at zero.
pub fn detect_period(
    points: &[(usize, f64)],
    polarity: Polarity,
    threshold: f64,
) -> Result<PeriodDetection, ProfileError> {
    let n = points.len();
    if n < MIN_DETECT_POINTS {
        return Err(ProfileError::SeriesTooShort { len: n });
    }
    let residuals = detrend(points);
    let sigma = libm::sqrt(residuals.iter().map(|r| r * r).sum::<f64>() / n as f64);
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1.0);
    if !(sigma > 1e-12 * scale) {
        return Ok(PeriodDetection { period: 1, confidence: 0.0 });
    }
    let sign = match polarity {
        Polarity::Peaks => 1.0,
        Polarity::Bottoms => -1.0,
    };
    let contrasts = local_contrasts(points, &residuals);
    // (p, score, standard error of the score)
    let mut scored: Vec<(usize, f64, f64)> = Vec::new();
    for p in 2..=n / 2 {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &(x, r) in &contrasts {
            if x % p == 0 {
                s0 += r;
                n0 += 1;
            } else {
                s1 += r;
                n1 += 1;
            }
        }
        if n0 < MIN_CLASS_MEMBERS || n1 == 0 {
            continue;
        }
        let score = sign * (s0 / n0 as f64 - s1 / n1 as f64);
        let se = sigma * libm::sqrt(1.0 / n0 as f64 + 1.0 / n1 as f64);
        scored.push((p, score, se));
    }
    let Some(&(best_p, best_score, best_se)) =
        scored.iter().fold(None, |acc: Option<&(usize, f64, f64)>, c| match acc {
            Some(a) if a.1 >= c.1 => Some(a),
            _ => Some(c),
        })
    else {
        return Ok(PeriodDetection { period: 1, confidence: 0.0 });
    };
    // Multiples of the true period share its bottoms and score almost as
    // high; a divisor within one standard error of the best wins.
    let (p, score) = scored
        .iter()
        .find(|&&(q, s, _)| best_p % q == 0 && s >= best_score - best_se)
        .map_or((best_p, best_score), |&(q, s, _)| (q, s));
    let confidence = (score / sigma).max(0.0);
    if score > threshold * sigma {
        Ok(PeriodDetection { period: p, confidence })
    } else {
        Ok(PeriodDetection { period: 1, confidence })
    }
}

/// Each residual minus the mean of its two neighbours at x - 1 and x + 1.
/// Points missing either neighbour are left out. A level shift in the
/// series only shows up at the point where it happens.
fn local_contrasts(points: &[(usize, f64)], residuals: &[f64]) -> Vec<(usize, f64)> {
    let by_x: BTreeMap<usize, f64> =
        points.iter().map(|p| p.0).zip(residuals.iter().copied()).collect();
    by_x.iter()
        .filter_map(|(&x, &r)| {
            let lo = by_x.get(&x.checked_sub(1)?)?;
            let hi = by_x.get(&(x + 1))?;
            Some((x, r - 0.5 * (lo + hi)))
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of the accuracy and latency periods.
pub fn optimal_cluster_size(p_acc: usize, p_lat: usize) -> usize {
    let (a, b) = (p_acc.max(1), p_lat.max(1));
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub estimate: PeriodEstimate,
    pub trace: Option<SweepTrace>,
}

/// Sweep + detection for one layer; layers too small to sweep or to detect
/// on come back flagged as skipped with period 1.
pub fn profile_layer(
    net: &Network,
    layer: NodeId,
    latency: &dyn LatencyModel,
    accuracy: &AccuracyResponseModel,
    probes: &ProbeSet,
    reference: &ReferenceOutputs,
    cfg: &SweepConfig,
) -> Result<LayerProfile, ProfileError> {
    let trace = match sweep_with_reference(net, layer, latency, accuracy, probes, reference, cfg) {
        Ok(t) => t,
        Err(ProfileError::LayerTooSmall { .. }) => {
            return Ok(LayerProfile { estimate: PeriodEstimate::SKIPPED, trace: None })
        }
        Err(e) => return Err(e),
    };
    if trace.points.len() < MIN_DETECT_POINTS {
        return Ok(LayerProfile { estimate: PeriodEstimate::SKIPPED, trace: Some(trace) });
    }
    let lat = detect_period(&trace.latency_series(), Polarity::Bottoms, cfg.threshold)?;
    let acc = detect_period(&trace.fidelity_series(), Polarity::Peaks, cfg.threshold)?;
    let estimate = PeriodEstimate {
        p_lat: lat.period,
        p_acc: acc.period,
        cluster_size: optimal_cluster_size(acc.period, lat.period),
        lat_confidence: lat.confidence,
        acc_confidence: acc.confidence,
        skipped: false,
    };
    Ok(LayerProfile { estimate, trace: Some(trace) })
}

/// Profiles every layer in `layers`, keyed by node id.
pub fn profile_all(
    net: &Network,
    latency: &dyn LatencyModel,
    accuracy: &AccuracyResponseModel,
    probes: &ProbeSet,
    layers: &[NodeId],
    cfg: &SweepConfig,
) -> Result<BTreeMap<NodeId, LayerProfile>, ProfileError> {
    let mut out = BTreeMap::new();
    if layers.is_empty() {
        return Ok(out);
    }
    let reference = ReferenceOutputs::compute(net, probes)?;
    for &layer in layers {
        out.insert(layer, profile_layer(net, layer, latency, accuracy, probes, &reference, cfg)?);
    }
    Ok(out)
}
