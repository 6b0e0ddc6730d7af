//! CSV and JSON artifacts.
//!
//! | artifact | schema |
//! |---|---|
//! | sweep CSV | `layer_id,filters_remaining,latency_ms,fidelity` |
//! | periods JSON | object `layer_id -> {p_lat, p_acc, cluster_size, lat_confidence, acc_confidence, skipped}` |
//! | measured trace CSV | `layer_id,filters_remaining,latency_ms`; `layer_id` `*` marks whole-network rows |
//! | fidelity CSV | `argmax_agreement,mean_abs_deviation,probe_count` |
//! | ranking CSV | `layer_id,rank,filter_index,score` |
//! | prune log CSV | sweep columns plus `method,step,filters_pruned_total` |
//! | prune log JSONL | one [`PruneStep`] per line |
//! | propagation JSONL | one line per prune step: `{step, touched: [{node, axis, removed}]}` |
//!
//! `layer_id` is always the node name.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use cprune_core::planner::PruneStep;
use cprune_core::pruner::Axis;
use cprune_core::ranking::rank_layer;
use cprune_core::{FidelityReport, MeasuredTrace, Network, NodeId, PeriodEstimate, PruneLog, SweepTrace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow<'a> {
    layer_id: &'a str,
    filters_remaining: usize,
    latency_ms: f64,
    fidelity: f64,
}

pub fn write_sweeps<'t, W: Write>(out: W, traces: impl IntoIterator<Item = &'t SweepTrace>) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        for p in &t.points {
            w.serialize(SweepRow {
                layer_id: &t.layer_name,
                filters_remaining: p.filters_remaining,
                latency_ms: p.latency_ms,
                fidelity: p.fidelity,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_periods<W: Write>(out: W, net: &Network, estimates: &BTreeMap<NodeId, PeriodEstimate>) -> Result<(), FormatError> {
    let by_name: BTreeMap<&str, &PeriodEstimate> =
        estimates.iter().map(|(id, e)| (net.node(*id).name.as_str(), e)).collect();
    serde_json::to_writer_pretty(out, &by_name)?;
    Ok(())
}

pub fn read_periods<R: Read>(input: R, net: &Network) -> Result<BTreeMap<NodeId, PeriodEstimate>, FormatError> {
    let by_name: BTreeMap<String, PeriodEstimate> = serde_json::from_reader(input)?;
    by_name
        .into_iter()
        .map(|(name, e)| net.find(&name).map(|id| (id, e)).ok_or(FormatError::UnknownLayer(name)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    layer_id: String,
    filters_remaining: usize,
    latency_ms: f64,
}

pub fn read_measured_trace<R: Read>(input: R) -> Result<MeasuredTrace, FormatError> {
    let mut trace = MeasuredTrace::new();
    for (i, row) in csv::Reader::from_reader(input).deserialize::<TraceRow>().enumerate() {
        let row = row?;
        if !row.latency_ms.is_finite() || row.latency_ms < 0.0 {
            return Err(FormatError::Row { row: i + 1, message: format!("latency_ms {} is not a finite non-negative number", row.latency_ms) });
        }
        trace.insert(&row.layer_id, row.filters_remaining, row.latency_ms);
    }
    Ok(trace)
}

pub fn write_measured_trace<W: Write>(out: W, trace: &MeasuredTrace) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    for (layer, n, t) in trace.rows() {
        w.serialize(TraceRow { layer_id: layer.to_string(), filters_remaining: n, latency_ms: t })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fidelity<W: Write>(out: W, report: &FidelityReport) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.serialize(report)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RankRow<'a> {
    layer_id: &'a str,
    rank: usize,
    filter_index: usize,
    score: f64,
}

/// Every listed layer's filters, lowest minimum-weight score first.
pub fn write_ranking<W: Write>(out: W, net: &Network, layers: &[NodeId]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    for &layer in layers {
        let name = &net.node(layer).name;
        let ranked = rank_layer(net, layer).map_err(|_| FormatError::UnknownLayer(name.clone()))?;
        for (rank, s) in ranked.iter().enumerate() {
            w.serialize(RankRow { layer_id: name, rank, filter_index: s.filter.index, score: s.value })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LogRow<'a> {
    layer_id: &'a str,
    filters_remaining: usize,
    latency_ms: f64,
    fidelity: f64,
    method: &'a str,
    step: usize,
    filters_pruned_total: usize,
}

/// One row per layer pruned in each step; `filters_remaining` is that
/// layer's filter count after the step. `original` is the unpruned network.
pub fn write_prune_log_csv<W: Write>(out: W, original: &Network, log: &PruneLog) -> Result<(), FormatError> {
    let mut remaining: BTreeMap<NodeId, usize> =
        original.conv_ids().into_iter().map(|id| (id, original.node(id).c_out().unwrap_or(0))).collect();
    let mut w = csv::Writer::from_writer(out);
    for step in &log.steps {
        let mut per_layer: BTreeMap<NodeId, usize> = BTreeMap::new();
        for f in &step.pruned {
            *per_layer.entry(f.layer).or_default() += 1;
        }
        for (layer, n) in per_layer {
            let left = remaining.entry(layer).or_default();
            *left = left.saturating_sub(n);
            w.serialize(LogRow {
                layer_id: &original.node(layer).name,
                filters_remaining: *left,
                latency_ms: step.latency_ms,
                fidelity: step.fidelity,
                method: step.method.as_str(),
                step: step.step,
                filters_pruned_total: step.filters_pruned_total,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_prune_log_jsonl<W: Write>(mut out: W, log: &PruneLog) -> Result<(), FormatError> {
    for step in &log.steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_prune_log_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<PruneStep>, FormatError> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[derive(Serialize)]
struct TouchLine<'a> {
    node: &'a str,
    axis: Axis,
    removed: &'a [usize],
}

#[derive(Serialize)]
struct PropagationLine<'a> {
    step: usize,
    touched: Vec<TouchLine<'a>>,
}

pub fn write_propagation_jsonl<W: Write>(mut out: W, original: &Network, log: &PruneLog) -> Result<(), FormatError> {
    for step in &log.steps {
        let touched = step
            .records
            .iter()
            .flat_map(|r| &r.touched)
            .map(|t| TouchLine { node: &original.node(t.node).name, axis: t.axis, removed: &t.removed })
            .collect();
        serde_json::to_writer(&mut out, &PropagationLine { step: step.step, touched })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
