//! Structured filter and cluster pruning for small CNNs.
//!
//! The crate is `no_std` with `alloc`: a layer-graph IR ([`nnir`]), a direct
//! reference forward pass ([`engine`]), minimum-weight ranking and cluster
//! formation ([`ranking`]), shape-consistent filter removal ([`pruner`]),
//! latency and accuracy-response models ([`hwmodel`]), the per-layer sweep and
//! period detector ([`profiler`]) and the budgeted pruning loops
//! ([`planner`]). File formats and the command line live in the `cprune`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod engine;
pub mod hwmodel;
pub mod nnir;
pub mod planner;
pub mod profiler;
pub mod pruner;
pub mod ranking;

pub use engine::{count_macs, count_params, fidelity, forward, Activation, FidelityReport, ProbeSet, ReferenceOutputs};
pub use hwmodel::{AccuracyResponseModel, LaneAlignedModel, LatencyModel, MeasuredTrace, TemporalModel};
pub use nnir::{synth_model, validate, ActDims, Family, LayerKind, Network, Node, NodeId, TopologySpec, WeightDims, Weights};
pub use planner::{cluster_prune, filter_prune, Budget, ClusterSizes, Method, ObjectiveWeights, PlanContext, PruneLog};
pub use profiler::{detect_period, optimal_cluster_size, profile_all, sweep_layer, PeriodEstimate, SweepTrace};
pub use pruner::{apply_cluster, prunable_layers, remove_filters, PruneConfig, PruneRequest};
pub use ranking::{FilterCluster, FilterId, MwScore};
