//! Minimum-weight filter importance, per-layer ranking and cluster formation.
//!
//! The score of a filter is the mean of its squared kernel weights over all of
//! its kernels and kernel positions; bias is excluded. Because it is a mean
//! rather than a sum, layers with different kernel sizes and fan-in can be
//! ranked against each other.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::nnir::{LayerKind, Network, NodeId, Weights};

/// Filter `index` of conv node `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterId {
    pub layer: NodeId,
    pub index: usize,
}

impl FilterId {
    pub const fn new(layer: NodeId, index: usize) -> Self {
        Self { layer, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MwScore {
    pub filter: FilterId,
    pub value: f64,
}

/// A group of same-layer filters pruned together.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterCluster {
    pub layer: NodeId,
    /// Members in ascending score order.
    pub members: Vec<FilterId>,
    pub avg_score: f64,
}

impl FilterCluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Member filter indices in ascending index order.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.members.iter().map(|f| f.index).collect();
        idx.sort_unstable();
        idx
    }

    fn first_index(&self) -> usize {
        self.members.first().map_or(0, |f| f.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankError {
    NotConv { layer: NodeId },
    UnknownLayer { layer: NodeId },
    InvalidClusterSize,
}

impl fmt::Display for RankError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotConv { layer } => write!(f, "node {layer} is not a conv layer"),
            Self::UnknownLayer { layer } => write!(f, "node {layer} does not exist"),
            Self::InvalidClusterSize => f.write_str("cluster size must be at least 1"),
        }
    }
}

/// Mean squared kernel weight of filter `index`.
pub fn mw_value(weights: &Weights, index: usize) -> f64 {
    let filter = weights.filter(index);
    let sum: f64 = filter.iter().map(|&w| f64::from(w) * f64::from(w)).sum();
    sum / filter.len() as f64
}

pub fn mw_score(layer: NodeId, weights: &Weights, index: usize) -> MwScore {
    MwScore { filter: FilterId::new(layer, index), value: mw_value(weights, index) }
}

fn conv_weights(net: &Network, layer: NodeId) -> Result<&Weights, RankError> {
    let node = net.get(layer).ok_or(RankError::UnknownLayer { layer })?;
    match (node.kind(), node.weights.as_ref()) {
        (LayerKind::ConvStandard | LayerKind::ConvPointwise | LayerKind::ConvDepthwise, Some(w)) => Ok(w),
        _ => Err(RankError::NotConv { layer }),
    }
}

/// Scores of every filter of `layer`, in filter order.
pub fn score_layer(net: &Network, layer: NodeId) -> Result<Vec<MwScore>, RankError> {
    let w = conv_weights(net, layer)?;
    Ok((0..w.dims.c_out).map(|k| mw_score(layer, w, k)).collect())
}

fn by_score_then_id(a: &MwScore, b: &MwScore) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then(a.filter.layer.cmp(&b.filter.layer))
        .then(a.filter.index.cmp(&b.filter.index))
}

/// Scores of `layer` in ascending order; ties by ascending filter index.
pub fn rank_layer(net: &Network, layer: NodeId) -> Result<Vec<MwScore>, RankError> {
    let mut scores = score_layer(net, layer)?;
    scores.sort_by(by_score_then_id);
    Ok(scores)
}

/// Sorts arbitrary scores ascending, ties by `(layer, index)`.
pub fn rank_scores(scores: &mut [MwScore]) {
    scores.sort_by(by_score_then_id);
}

/// Chunks an ascending-ranked layer into clusters of exactly `size` filters.
/// The trailing `len mod size` filters form no cluster.
pub fn form_clusters(ranked: &[MwScore], size: usize) -> Result<Vec<FilterCluster>, RankError> {
    if size == 0 {
        return Err(RankError::InvalidClusterSize);
    }
    Ok(ranked
        .chunks_exact(size)
        .map(|chunk| FilterCluster {
            layer: chunk[0].filter.layer,
            members: chunk.iter().map(|s| s.filter).collect(),
            avg_score: chunk.iter().map(|s| s.value).sum::<f64>() / size as f64,
        })
        .collect())
}

/// Ascending by average score; ties by `(layer, first member index)`.
pub fn rank_clusters(mut clusters: Vec<FilterCluster>) -> Vec<FilterCluster> {
    clusters.sort_by(|a, b| {
        a.avg_score
            .total_cmp(&b.avg_score)
            .then(a.layer.cmp(&b.layer))
            .then(a.first_index().cmp(&b.first_index()))
    });
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnir::{ActDims, NetworkBuilder, WeightDims};
    use alloc::vec;

    fn layer_with(filters: &[&[f32]], kh: usize) -> (Network, NodeId) {
        let c_in = filters[0].len() / (kh * kh);
        let mut b = NetworkBuilder::new(ActDims::new(c_in, 4, 4), 0);
        let id = b.conv("l", LayerKind::ConvStandard, b.input(), filters.len(), c_in, kh, 1, 0, false);
        let mut net = b.finish(id);
        let data = filters.iter().flat_map(|f| f.iter().copied()).collect();
        net.nodes[id.0].weights = Some(Weights::new(WeightDims::new(filters.len(), c_in, kh, kh), data));
        (net, id)
    }

    #[test]
    fn zero_and_constant_filters() {
        let w = Weights::new(WeightDims::new(2, 2, 1, 1), vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(mw_value(&w, 0), 0.0);
        assert_eq!(mw_value(&w, 1), 0.25);
    }

    #[test]
    fn two_kernel_filter_mean_of_squares() {
        // Kernels [[1,2],[3,4]] and [[0,0],[0,0]]: (1+4+9+16)/8.
        let w = Weights::new(WeightDims::new(1, 2, 2, 2), vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mw_value(&w, 0), 3.75);
    }

    #[test]
    fn ranking_sorts_ascending_and_keeps_index_order_on_ties() {
        let a = libm::sqrt(0.5) as f32;
        let b = libm::sqrt(0.1) as f32;
        let c = libm::sqrt(0.9) as f32;
        let (net, id) = layer_with(&[&[a], &[b], &[c]], 1);
        let order: Vec<usize> = rank_layer(&net, id).unwrap().iter().map(|s| s.filter.index).collect();
        assert_eq!(order, vec![1, 0, 2]);

        let (net, id) = layer_with(&[&[0.3], &[0.3], &[-0.3], &[0.3]], 1);
        let order: Vec<usize> = rank_layer(&net, id).unwrap().iter().map(|s| s.filter.index).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);

        let (net, id) = layer_with(&[&[0.7]], 1);
        assert_eq!(rank_layer(&net, id).unwrap()[0].filter.index, 0);
    }

    #[test]
    fn ranking_rejects_non_conv() {
        let (net, _) = layer_with(&[&[0.1]], 1);
        assert_eq!(rank_layer(&net, NodeId(0)), Err(RankError::NotConv { layer: NodeId(0) }));
    }

    fn fake_ranked(layer: usize, n: usize) -> Vec<MwScore> {
        (0..n).map(|i| MwScore { filter: FilterId::new(NodeId(layer), i), value: i as f64 }).collect()
    }

    #[test]
    fn clusters_drop_the_remainder() {
        let c = form_clusters(&fake_ranked(1, 9), 8).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].size(), 8);
        assert_eq!(c[0].avg_score, 3.5);
        assert_eq!(form_clusters(&fake_ranked(1, 8), 8).unwrap().len(), 1);
        assert_eq!(form_clusters(&fake_ranked(1, 5), 1).unwrap().len(), 5);
        assert_eq!(form_clusters(&fake_ranked(1, 5), 0), Err(RankError::InvalidClusterSize));
    }

    fn cluster(layer: usize, first: usize, avg: f64) -> FilterCluster {
        FilterCluster { layer: NodeId(layer), members: vec![FilterId::new(NodeId(layer), first)], avg_score: avg }
    }

    #[test]
    fn cluster_ranking_and_ties() {
        let ranked = rank_clusters(vec![cluster(1, 0, 0.2), cluster(2, 0, 0.05), cluster(3, 0, 0.4)]);
        let avgs: Vec<f64> = ranked.iter().map(|c| c.avg_score).collect();
        assert_eq!(avgs, vec![0.05, 0.2, 0.4]);
        assert!(rank_clusters(Vec::new()).is_empty());
        let ranked = rank_clusters(vec![cluster(3, 0, 0.1), cluster(1, 2, 0.1)]);
        assert_eq!(ranked[0].layer, NodeId(1));
    }
}
