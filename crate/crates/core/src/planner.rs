//! Whole-model pruning loops under parameter/latency budgets.
//!
//! [`cluster_prune`] ranks filters per layer, chunks each layer into clusters
//! of its cluster size, ranks all clusters by average score and removes the
//! lowest one. Clusters are re-formed from the current network after every
//! removal, so member indices are never stale. [`filter_prune`] is the
//! per-filter baseline: one global ascending order over all prunable filters,
//! removed one at a time and logged every [`FILTER_LOG_INTERVAL`] filters.
//!
//! Selection follows the score order only. The hardware objective
//! `α_acc · H_acc + α_speed · H_speed` is computed for every logged step and
//! reported, never optimized.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{count_macs, count_params, EngineError, FidelityReport, ProbeSet, ReferenceOutputs};
use crate::hwmodel::{AccuracyResponseModel, HwError, LatencyModel};
use crate::nnir::{Network, NodeId, ShapeError};
use crate::pruner::{apply_cluster, prunable_layers, remove_filters, PropagationRecord, PruneConfig, PruneError, PruneRequest};
use crate::ranking::{form_clusters, rank_clusters, rank_layer, rank_scores, score_layer, FilterId, MwScore, RankError};

/// Filters removed between two logged steps of [`filter_prune`].
pub const FILTER_LOG_INTERVAL: usize = 8;

/// Stopping bounds. `max_params` and `max_latency_ms` are strict upper
/// bounds (`Cons < B`).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Budget {
    pub max_params: Option<u64>,
    pub max_latency_ms: Option<f64>,
    pub max_filters_pruned: Option<usize>,
}

impl Budget {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.max_params.is_none() && self.max_latency_ms.is_none() && self.max_filters_pruned.is_none() {
            return Err(PlanError::InvalidBudget("at least one bound is required"));
        }
        if self.max_params == Some(0) {
            return Err(PlanError::InvalidBudget("parameter bound must be positive"));
        }
        if let Some(t) = self.max_latency_ms {
            if !(t > 0.0) || !t.is_finite() {
                return Err(PlanError::InvalidBudget("latency bound must be positive"));
            }
        }
        Ok(())
    }

    fn has_resource_bound(&self) -> bool {
        self.max_params.is_some() || self.max_latency_ms.is_some()
    }

    pub fn memory_ok(&self, params: u64) -> Option<bool> {
        self.max_params.map(|b| params < b)
    }

    pub fn latency_ok(&self, latency_ms: f64) -> Option<bool> {
        self.max_latency_ms.map(|b| latency_ms < b)
    }

    /// True when every given resource bound holds; false when none is given.
    pub fn satisfied(&self, params: u64, latency_ms: f64) -> bool {
        self.has_resource_bound()
            && self.memory_ok(params).unwrap_or(true)
            && self.latency_ok(latency_ms).unwrap_or(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveWeights {
    pub acc: f64,
    pub speed: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { acc: 1.0, speed: 1.0 }
    }
}

impl ObjectiveWeights {
    pub fn new(acc: f64, speed: f64) -> Result<Self, PlanError> {
        if !(acc >= 0.0 && speed >= 0.0) || !(acc + speed).is_finite() {
            return Err(PlanError::InvalidWeights("weights must be finite and non-negative"));
        }
        if acc == 0.0 && speed == 0.0 {
            return Err(PlanError::InvalidWeights("weights must not both be zero"));
        }
        Ok(Self { acc, speed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Filter,
    Cluster,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Filter => "filter",
            Self::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    BudgetSatisfied,
    MaxFiltersReached,
    CandidatesExhausted,
}

/// Hardware objective and its components for one network.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Objective {
    /// Adjusted argmax agreement against the reference.
    pub h_acc: f64,
    /// Reference latency over candidate latency.
    pub h_speed: f64,
    pub value: f64,
    pub params: u64,
    pub macs: u64,
    pub latency_ms: f64,
    pub fidelity: FidelityReport,
    pub memory_ok: Option<bool>,
    pub latency_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PruneStep {
    pub step: usize,
    pub method: Method,
    /// Filters removed in this step, with indices valid at removal time.
    pub pruned: Vec<FilterId>,
    pub filters_pruned_total: usize,
    pub params: u64,
    pub macs: u64,
    pub latency_ms: f64,
    pub fidelity: f64,
    pub mean_abs_deviation: f64,
    pub objective: f64,
    /// One record per structural removal in this step.
    pub records: Vec<PropagationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PruneLog {
    pub method: Method,
    pub steps: Vec<PruneStep>,
    pub stop: StopReason,
    /// Set when a resource bound was given but could not be met.
    pub budget_unmet: bool,
}

impl PruneLog {
    /// Every removed filter in removal order.
    pub fn pruned_sequence(&self) -> Vec<FilterId> {
        self.steps.iter().flat_map(|s| s.pruned.iter().copied()).collect()
    }

    pub fn filters_pruned(&self) -> usize {
        self.steps.last().map_or(0, |s| s.filters_pruned_total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanError {
    InvalidBudget(&'static str),
    InvalidWeights(&'static str),
    MissingClusterSize { layer: String },
    NoCandidates,
    Prune(PruneError),
    Engine(EngineError),
    Hw(HwError),
    Shape(ShapeError),
    Rank(RankError),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidBudget(m) => write!(f, "invalid budget: {m}"),
            Self::InvalidWeights(m) => write!(f, "invalid objective weights: {m}"),
            Self::MissingClusterSize { layer } => write!(f, "no cluster size given for layer `{layer}`"),
            Self::NoCandidates => f.write_str("no prunable filters: every candidate layer is at its minimum"),
            Self::Prune(e) => e.fmt(f),
            Self::Engine(e) => e.fmt(f),
            Self::Hw(e) => e.fmt(f),
            Self::Shape(e) => e.fmt(f),
            Self::Rank(e) => e.fmt(f),
        }
    }
}

macro_rules! from_err {
    ($($t:ident => $v:ident),*) => {$(
        impl From<$t> for PlanError {
            fn from(e: $t) -> Self {
                Self::$v(e)
            }
        }
    )*};
}
from_err!(PruneError => Prune, EngineError => Engine, HwError => Hw, ShapeError => Shape, RankError => Rank);

/// Cluster size per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterSizes {
    Uniform(usize),
    PerLayer(BTreeMap<NodeId, usize>),
}

impl ClusterSizes {
    pub fn get(&self, layer: NodeId) -> Option<usize> {
        match self {
            Self::Uniform(p) => Some(*p),
            Self::PerLayer(m) => m.get(&layer).copied(),
        }
    }
}

/// Optional transformation applied after every structural step, the place a
/// fine-tuning pass would plug in. The default is the identity.
pub trait StepHook {
    fn after_step(&mut self, net: Network) -> Network {
        net
    }
}

pub struct NoFineTune;

impl StepHook for NoFineTune {}

/// Everything a planning run reads besides the network and budget.
pub struct PlanContext<'a> {
    pub latency: &'a dyn LatencyModel,
    pub accuracy: AccuracyResponseModel,
    pub probes: &'a ProbeSet,
    pub weights: ObjectiveWeights,
    pub prune: PruneConfig,
    /// Candidate layers; `None` means [`prunable_layers`].
    pub layers: Option<Vec<NodeId>>,
    /// Re-rank the baseline's global order after every removal instead of
    /// ranking once up front.
    pub rerank_filters: bool,
}

impl<'a> PlanContext<'a> {
    pub fn new(latency: &'a dyn LatencyModel, probes: &'a ProbeSet) -> Self {
        Self {
            latency,
            accuracy: AccuracyResponseModel::default(),
            probes,
            weights: ObjectiveWeights::default(),
            prune: PruneConfig::default(),
            layers: None,
            rerank_filters: false,
        }
    }

    fn candidate_layers(&self, net: &Network) -> Vec<NodeId> {
        self.layers.clone().unwrap_or_else(|| prunable_layers(net, &self.prune))
    }
}

/// Reference state shared by every evaluation in a run.
struct Evaluator<'c, 'a> {
    ctx: &'c PlanContext<'a>,
    reference: ReferenceOutputs,
    reference_latency: f64,
}

impl<'c, 'a> Evaluator<'c, 'a> {
    fn new(ctx: &'c PlanContext<'a>, reference: &Network) -> Result<Self, PlanError> {
        Ok(Self {
            ctx,
            reference: ReferenceOutputs::compute(reference, ctx.probes)?,
            reference_latency: ctx.latency.network_latency(reference)?.total_ms,
        })
    }

    fn evaluate(&self, net: &Network, budget: Option<&Budget>) -> Result<Objective, PlanError> {
        let base = self.reference.compare(net, self.ctx.probes)?;
        let fidelity = self.ctx.accuracy.adjusted_fidelity(net, base);
        let latency_ms = self.ctx.latency.network_latency(net)?.total_ms;
        let params = count_params(net);
        let h_acc = fidelity.argmax_agreement;
        let h_speed = if latency_ms > 0.0 { self.reference_latency / latency_ms } else { 0.0 };
        Ok(Objective {
            h_acc,
            h_speed,
            value: self.ctx.weights.acc * h_acc + self.ctx.weights.speed * h_speed,
            params,
            macs: count_macs(net)?.total,
            latency_ms,
            fidelity,
            memory_ok: budget.and_then(|b| b.memory_ok(params)),
            latency_ok: budget.and_then(|b| b.latency_ok(latency_ms)),
        })
    }

    fn step(&self, net: &Network, method: Method, step: usize, pruned: Vec<FilterId>, total: usize, records: Vec<PropagationRecord>) -> Result<PruneStep, PlanError> {
        let o = self.evaluate(net, None)?;
        Ok(PruneStep {
            step,
            method,
            pruned,
            filters_pruned_total: total,
            params: o.params,
            macs: o.macs,
            latency_ms: o.latency_ms,
            fidelity: o.h_acc,
            mean_abs_deviation: o.fidelity.mean_abs_deviation,
            objective: o.value,
            records,
        })
    }
}

/// Evaluates the hardware objective of `net` against `reference`.
pub fn evaluate_objective(
    net: &Network,
    reference: &Network,
    ctx: &PlanContext<'_>,
    budget: Option<&Budget>,
) -> Result<Objective, PlanError> {
    Evaluator::new(ctx, reference)?.evaluate(net, budget)
}

fn resources(ctx: &PlanContext<'_>, net: &Network) -> Result<(u64, f64), PlanError> {
    Ok((count_params(net), ctx.latency.network_latency(net)?.total_ms))
}

fn finish(method: Method, steps: Vec<PruneStep>, stop: StopReason, budget: &Budget, satisfied: bool) -> PruneLog {
    PruneLog { method, steps, stop, budget_unmet: budget.has_resource_bound() && !satisfied }
}

/// Greedy cluster pruning.
pub fn cluster_prune(
    net: &Network,
    sizes: &ClusterSizes,
    budget: &Budget,
    ctx: &PlanContext<'_>,
    hook: &mut dyn StepHook,
) -> Result<(Network, PruneLog), PlanError> {
    budget.validate()?;
    let layers = ctx.candidate_layers(net);
    for &l in &layers {
        if sizes.get(l).is_none_or(|p| p == 0) {
            return Err(PlanError::MissingClusterSize { layer: net.node(l).name.clone() });
        }
    }
    let eval = Evaluator::new(ctx, net)?;
    let min_remaining = ctx.prune.min_remaining;
    let mut current = net.clone();
    let mut steps = Vec::new();
    let mut total = 0usize;
    let stop = loop {
        let (params, latency) = resources(ctx, &current)?;
        if budget.satisfied(params, latency) {
            break StopReason::BudgetSatisfied;
        }
        if budget.max_filters_pruned.is_some_and(|m| total >= m) {
            break StopReason::MaxFiltersReached;
        }
        let mut clusters = Vec::new();
        for &l in &layers {
            let p = sizes.get(l).unwrap_or(1);
            let c_out = current.node(l).c_out().unwrap_or(0);
            if c_out < p + min_remaining {
                continue;
            }
            clusters.extend(form_clusters(&rank_layer(&current, l)?, p)?);
        }
        if clusters.is_empty() {
            if steps.is_empty() {
                return Err(PlanError::NoCandidates);
            }
            break StopReason::CandidatesExhausted;
        }
        let allowance = budget.max_filters_pruned.map_or(usize::MAX, |m| m - total);
        let Some(cluster) = rank_clusters(clusters).into_iter().find(|c| c.size() <= allowance) else {
            break StopReason::MaxFiltersReached;
        };
        let (next, record) = apply_cluster(&current, &cluster, min_remaining)?;
        current = hook.after_step(next);
        total += cluster.size();
        let pruned = cluster.members.iter().map(|m| FilterId::new(m.layer, m.index)).collect();
        steps.push(eval.step(&current, Method::Cluster, steps.len(), pruned, total, vec![record])?);
    };
    let (params, latency) = resources(ctx, &current)?;
    let satisfied = budget.satisfied(params, latency);
    Ok((current, finish(Method::Cluster, steps, stop, budget, satisfied)))
}

/// Picks the next baseline filter, returning its current index.
struct FilterQueue {
    /// Static order over original indices, consumed front to back.
    order: Vec<MwScore>,
    next: usize,
    /// Original indices already removed, per layer.
    removed: BTreeMap<NodeId, Vec<usize>>,
}

impl FilterQueue {
    fn new(net: &Network, layers: &[NodeId]) -> Result<Self, PlanError> {
        let mut order = Vec::new();
        for &l in layers {
            order.extend(score_layer(net, l)?);
        }
        rank_scores(&mut order);
        Ok(Self { order, next: 0, removed: BTreeMap::new() })
    }

    fn pop(&mut self, current: &Network, min_remaining: usize) -> Option<FilterId> {
        while self.next < self.order.len() {
            let f = self.order[self.next].filter;
            self.next += 1;
            if current.node(f.layer).c_out().unwrap_or(0) <= min_remaining {
                continue;
            }
            let removed = self.removed.entry(f.layer).or_default();
            let shift = removed.iter().filter(|&&r| r < f.index).count();
            removed.push(f.index);
            return Some(FilterId::new(f.layer, f.index - shift));
        }
        None
    }
}

fn lowest_current(net: &Network, layers: &[NodeId], min_remaining: usize) -> Result<Option<FilterId>, PlanError> {
    let mut scores = Vec::new();
    for &l in layers {
        if net.node(l).c_out().unwrap_or(0) > min_remaining {
            scores.extend(score_layer(net, l)?);
        }
    }
    rank_scores(&mut scores);
    Ok(scores.first().map(|s| s.filter))
}

/// Per-filter baseline: prunes the globally least important filter first,
/// unevenly across layers.
pub fn filter_prune(
    net: &Network,
    budget: &Budget,
    ctx: &PlanContext<'_>,
    hook: &mut dyn StepHook,
) -> Result<(Network, PruneLog), PlanError> {
    budget.validate()?;
    let layers = ctx.candidate_layers(net);
    let eval = Evaluator::new(ctx, net)?;
    let min_remaining = ctx.prune.min_remaining;
    let mut queue = FilterQueue::new(net, &layers)?;
    let mut current = net.clone();
    let mut steps = Vec::new();
    let mut total = 0usize;
    let mut batch: Vec<FilterId> = Vec::new();
    let mut records = Vec::new();
    let stop = loop {
        let (params, latency) = resources(ctx, &current)?;
        if budget.satisfied(params, latency) {
            break StopReason::BudgetSatisfied;
        }
        if budget.max_filters_pruned.is_some_and(|m| total >= m) {
            break StopReason::MaxFiltersReached;
        }
        let next = if ctx.rerank_filters {
            lowest_current(&current, &layers, min_remaining)?
        } else {
            queue.pop(&current, min_remaining)
        };
        let Some(f) = next else {
            if total == 0 {
                return Err(PlanError::NoCandidates);
            }
            break StopReason::CandidatesExhausted;
        };
        let (pruned, record) = remove_filters(&current, &PruneRequest::new(f.layer, vec![f.index]), min_remaining)?;
        current = hook.after_step(pruned);
        total += 1;
        batch.push(f);
        records.push(record);
        if batch.len() == FILTER_LOG_INTERVAL {
            let s = eval.step(&current, Method::Filter, steps.len(), core::mem::take(&mut batch), total, core::mem::take(&mut records))?;
            steps.push(s);
        }
    };
    if !batch.is_empty() {
        steps.push(eval.step(&current, Method::Filter, steps.len(), batch, total, records)?);
    }
    let (params, latency) = resources(ctx, &current)?;
    let satisfied = budget.satisfied(params, latency);
    Ok((current, finish(Method::Filter, steps, stop, budget, satisfied)))
}
