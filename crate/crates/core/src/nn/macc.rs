use super::{ModelGraph, Op};

/// Multiply-accumulates of one layer. Convolutions count every kernel tap,
/// padded positions included; everything except conv and fc is free.
pub(crate) fn layer_macc(graph: &ModelGraph, layer: usize) -> u64 {
    match graph.layers()[layer].op {
        Op::Conv(spec) => {
            let out = graph.shape(layer);
            (out[1] * out[2] * spec.out_ch * spec.in_ch * spec.kernel * spec.kernel) as u64
        }
        Op::FullyConnected { inputs, outputs } => (inputs * outputs) as u64,
        _ => 0,
    }
}

/// Total MACC of one forward pass, from the layer shapes alone.
pub fn count_macc(graph: &ModelGraph) -> u64 {
    (0..graph.len()).map(|i| layer_macc(graph, i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{reference_graph, reference_graph_with_imu};

    #[test]
    fn per_layer_counts() {
        let g = reference_graph();
        let at = |n: &str| layer_macc(&g, g.index_of(n).unwrap());
        assert_eq!(at("stem.conv1"), 32 * 32 * 16 * 9);
        assert_eq!(at("block2.conv1"), 8 * 8 * 32 * 16 * 9);
        assert_eq!(at("block2.proj"), 8 * 8 * 32 * 16);
        assert_eq!(at("fc"), 32 * 17);
        assert_eq!(at("stem.bn1"), 0);
    }

    #[test]
    fn fusion_adds_only_the_mlp_and_wider_classifier() {
        let base = count_macc(&reference_graph());
        let fused = count_macc(&reference_graph_with_imu());
        assert_eq!(fused - base, 3 * 30 + 30 * 3 + 3 * 17);
    }
}
