#![allow(dead_code)]

use cprune_core::nnir::{ActDims, LayerSpec, NetworkBuilder};
use cprune_core::{LayerKind, Network, NodeId};

/// `input -> [3x3 conv -> relu]* -> global pool -> 1x1 classifier -> output`.
/// Returns the network and the ids of the hidden convs.
pub fn toy_chain(widths: &[usize], seed: u64) -> (Network, Vec<NodeId>) {
    let hw = 6;
    let mut b = NetworkBuilder::new(ActDims::new(3, hw, hw), seed);
    let mut prev = b.input();
    let mut c_prev = 3;
    let mut ids = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        let conv = b.conv(&format!("c{i}"), LayerKind::ConvStandard, prev, w, c_prev, 3, 1, 1, true);
        ids.push(conv);
        prev = b.relu(&format!("c{i}/relu"), conv);
        c_prev = w;
    }
    let pool = b.layer("pool", LayerSpec::pool(LayerKind::PoolAvg, hw, 1, 0), vec![prev]);
    let cls = b.conv("classifier", LayerKind::ConvPointwise, pool, 4, c_prev, 1, 1, 0, true);
    (b.finish(cls), ids)
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
