//! Small reference networks used by tests, benchmarks and the CLI.

use crate::graph::{NeuronGraph, NeuronId, NeuronOp};
use crate::network::{Affine, Kernel, Layer, LayerKind, LayerOp, LayerShape, Network};

fn layer(op: LayerOp, size: usize) -> Layer {
    Layer::new(op, LayerShape::flat(size))
}

/// Five inputs, a shared 2-tap convolution `c_i = 0.2 + x_i - 1.3 x_{i+1}`,
/// ReLU, pairwise max-pooling and two weighted-sum layers with four outputs.
pub fn toy_cnn() -> Network {
    let ws1 = Affine::from_dense(&[vec![2.0, -1.0], vec![3.0, 1.0]], vec![5.0, -3.0]).unwrap();
    let out = Affine::from_dense(
        &[
            vec![1.0, 0.0],
            vec![0.0, 3.0],
            vec![2.0, -1.0],
            vec![0.0, 1.0],
        ],
        vec![10.0, 2.0, -12.0, 0.0],
    )
    .unwrap();
    Network::new(
        "toy-cnn",
        vec![
            layer(LayerOp::Input, 5),
            layer(
                LayerOp::Convolution(Kernel {
                    weights: vec![1.0, -1.3],
                    bias: 0.2,
                }),
                4,
            ),
            layer(LayerOp::Relu, 4),
            layer(LayerOp::MaxPool { pool: 2 }, 2),
            layer(LayerOp::WeightedSum(ws1), 2),
            layer(LayerOp::Output(out), 4),
        ],
    )
    .unwrap()
}

/// Four inputs, convolution `c_i = x_i - x_{i+1}`, overlapping maxima
/// `m_0 = max(c_0, c_1)`, `m_1 = max(c_1, c_2)` and `y = m_0 + m_1`.
///
/// Pools are non-overlapping in the layered form, so `c_1` is duplicated by a
/// 0/1 selection layer ahead of the pooling layer.
pub fn lp_example_network() -> Network {
    let select = Affine::from_triples(
        4,
        3,
        [(0, 0, 1.0), (1, 1, 1.0), (2, 1, 1.0), (3, 2, 1.0)],
        vec![0.0; 4],
    )
    .unwrap();
    let out = Affine::from_dense(&[vec![1.0, 1.0]], vec![0.0]).unwrap();
    Network::new(
        "lp-example",
        vec![
            layer(LayerOp::Input, 4),
            layer(
                LayerOp::Convolution(Kernel {
                    weights: vec![1.0, -1.0],
                    bias: 0.0,
                }),
                3,
            ),
            layer(LayerOp::WeightedSum(select), 4),
            layer(LayerOp::MaxPool { pool: 2 }, 2),
            layer(LayerOp::Output(out), 1),
        ],
    )
    .unwrap()
}

/// Input box of the LP example: `x_0, x_1 in [-1, 1]`, `x_2, x_3 in [-2, 2]`.
pub fn lp_example_box() -> Vec<(f64, f64)> {
    vec![(-1.0, 1.0), (-1.0, 1.0), (-2.0, 2.0), (-2.0, 2.0)]
}

/// `x -> h0 -> h1 -> y` with a skip edge `x -> y` of weight -1, so `y == 0`.
pub fn skip_example_graph() -> NeuronGraph {
    let flat = LayerShape::flat;
    NeuronGraph::from_layers(vec![
        (LayerKind::Input, flat(1), vec![NeuronOp::Input]),
        (
            LayerKind::WeightedSum,
            flat(1),
            vec![NeuronOp::Affine {
                bias: 0.0,
                terms: vec![(NeuronId(0), 1.0)],
            }],
        ),
        (
            LayerKind::WeightedSum,
            flat(1),
            vec![NeuronOp::Affine {
                bias: 0.0,
                terms: vec![(NeuronId(1), 1.0)],
            }],
        ),
        (
            LayerKind::Output,
            flat(1),
            vec![NeuronOp::Affine {
                bias: 0.0,
                terms: vec![(NeuronId(2), 1.0), (NeuronId(0), -1.0)],
            }],
        ),
    ])
    .unwrap()
}

/// Layered equivalent of [`skip_example_graph`]: the skip edge is carried
/// through the hidden layers by pass-through neurons.
pub fn skip_example_network() -> Network {
    let ws1 = Affine::from_dense(&[vec![1.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
    let ws2 = Affine::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
    let out = Affine::from_dense(&[vec![1.0, -1.0]], vec![0.0]).unwrap();
    Network::new(
        "skip-example",
        vec![
            layer(LayerOp::Input, 1),
            layer(LayerOp::WeightedSum(ws1), 2),
            layer(LayerOp::WeightedSum(ws2), 2),
            layer(LayerOp::Output(out), 1),
        ],
    )
    .unwrap()
}
