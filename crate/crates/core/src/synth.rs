//! Seeded random networks and queries for tests and benchmarks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::Interval;
use crate::error::Result;
use crate::network::{Affine, Kernel, Layer, LayerOp, LayerShape, Network};
use crate::policies::TestSet;
use crate::query::{top_two, OutputConstraint, VerificationQuery};

/// Layout `input -> conv -> relu -> maxpool -> ws -> relu -> output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnShape {
    pub inputs: usize,
    pub kernel: usize,
    /// Must divide `inputs - kernel + 1`.
    pub pool: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl CnnShape {
    pub fn conv_size(&self) -> usize {
        self.inputs + 1 - self.kernel
    }

    /// ReLU and max neurons of the layout.
    pub fn piecewise_linear(&self) -> usize {
        self.conv_size() + self.conv_size() / self.pool + self.hidden
    }

    pub fn neurons(&self) -> usize {
        self.inputs + 2 * self.conv_size() + self.conv_size() / self.pool + 2 * self.hidden + self.outputs
    }

    /// A random small layout with at most `max_pl` piecewise-linear neurons.
    pub fn random_small<R: Rng>(rng: &mut R, max_pl: usize) -> Self {
        loop {
            let kernel = rng.gen_range(1..=3);
            let pool = rng.gen_range(1..=3);
            let pools = rng.gen_range(1..=3);
            let conv = pool * pools;
            let shape = CnnShape {
                inputs: conv + kernel - 1,
                kernel,
                pool,
                hidden: rng.gen_range(1..=3),
                outputs: rng.gen_range(1..=3),
            };
            if shape.piecewise_linear() <= max_pl {
                return shape;
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    rng.gen_range(-scale..=scale)
}

fn random_affine<R: Rng>(rng: &mut R, out: usize, inp: usize) -> Affine {
    let w: Vec<Vec<f64>> = (0..out)
        .map(|_| (0..inp).map(|_| uniform(rng, 1.0)).collect())
        .collect();
    let b = (0..out).map(|_| uniform(rng, 0.5)).collect();
    Affine::from_dense(&w, b).expect("consistent sizes")
}

/// A network with the given layout and uniform random weights.
pub fn random_cnn<R: Rng>(rng: &mut R, shape: &CnnShape, name: &str) -> Network {
    assert!(shape.kernel >= 1 && shape.kernel <= shape.inputs);
    assert_eq!(shape.conv_size() % shape.pool, 0, "pool must divide the conv layer");
    let conv = shape.conv_size();
    let pooled = conv / shape.pool;
    let flat = LayerShape::flat;
    let kernel = Kernel {
        weights: (0..shape.kernel).map(|_| uniform(rng, 1.0)).collect(),
        bias: uniform(rng, 0.5),
    };
    Network::new(
        name,
        vec![
            Layer::new(LayerOp::Input, flat(shape.inputs)),
            Layer::new(LayerOp::Convolution(kernel), flat(conv)),
            Layer::new(LayerOp::Relu, flat(conv)),
            Layer::new(LayerOp::MaxPool { pool: shape.pool }, flat(pooled)),
            Layer::new(LayerOp::WeightedSum(random_affine(rng, shape.hidden, pooled)), flat(shape.hidden)),
            Layer::new(LayerOp::Relu, flat(shape.hidden)),
            Layer::new(LayerOp::Output(random_affine(rng, shape.outputs, shape.hidden)), flat(shape.outputs)),
        ],
    )
    .expect("generated network is valid")
}

/// A box per input with a random center in `[-1, 1]` and half-width in
/// `(0, max_radius]`.
pub fn random_box<R: Rng>(rng: &mut R, n: usize, max_radius: f64) -> Vec<Interval> {
    (0..n)
        .map(|_| {
            let c = uniform(rng, 1.0);
            let r = rng.gen_range(0.0..max_radius) + 1e-3;
            Interval::new(c - r, c + r)
        })
        .collect()
}

/// One random atom `c . y >= t` whose threshold lies near the largest value
/// of `c . y` seen on `samples` random inputs from the box, so both
/// verdicts are common.
pub fn random_property<R: Rng>(
    rng: &mut R,
    net: &Network,
    input_box: &[Interval],
    samples: usize,
) -> Vec<OutputConstraint> {
    let m = net.output_size();
    let coeffs: Vec<f64> = (0..m).map(|_| uniform(rng, 1.0)).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..samples.max(1) {
        let x: Vec<f64> = input_box.iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect();
        let y = net.evaluate(&x).expect("box matches inputs");
        let v: f64 = coeffs.iter().zip(y.output()).map(|(c, y)| c * y).sum();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let spread = (hi - lo).max(1e-3);
    let t = hi + spread * rng.gen_range(-0.3..0.5);
    vec![OutputConstraint::new(
        coeffs.iter().enumerate().map(|(k, &c)| (k, -c)).collect(),
        t,
    )]
}

/// Layout of the generated benchmark networks.
pub const BENCH_SHAPE: CnnShape = CnnShape {
    inputs: 32,
    kernel: 3,
    pool: 2,
    hidden: 10,
    outputs: 4,
};

/// Perturbation radii drawn for benchmark queries.
pub const BENCH_EPS: [f64; 4] = [0.05, 0.1, 0.2, 0.3];

/// A random network with a labelled sample set: samples are uniform in
/// `[0, 1]` and labelled with the network's own prediction.
pub fn labelled_network<R: Rng>(rng: &mut R, shape: &CnnShape, samples: usize, name: &str) -> (Network, TestSet) {
    let net = random_cnn(rng, shape, name);
    let xs: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..shape.inputs).map(|_| rng.gen_range(0.0..=1.0)).collect())
        .collect();
    let labels = xs
        .iter()
        .map(|x| {
            let y = net.evaluate(x).expect("sample matches inputs");
            top_two(y.output()).map_or(0, |(first, _)| first)
        })
        .collect();
    let ts = TestSet::new(xs, labels, Some(shape.outputs)).expect("consistent samples");
    (net, ts)
}

/// One benchmark query: network index, sample index and radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchQuery {
    pub network: usize,
    pub sample: usize,
    pub eps: f64,
}

/// `networks` labelled networks of [`BENCH_SHAPE`] with `per_network`
/// adversarial queries each, on distinct samples.
pub fn bench_suite<R: Rng>(rng: &mut R, networks: usize, per_network: usize) -> (Vec<(Network, TestSet)>, Vec<BenchQuery>) {
    let mut nets = Vec::with_capacity(networks);
    let mut queries = Vec::with_capacity(networks * per_network);
    for n in 0..networks {
        nets.push(labelled_network(rng, &BENCH_SHAPE, per_network.max(1), &format!("bench{n}")));
        for sample in 0..per_network {
            queries.push(BenchQuery {
                network: n,
                sample,
                eps: BENCH_EPS[rng.gen_range(0..BENCH_EPS.len())],
            });
        }
    }
    (nets, queries)
}

/// A random small network with a random box property over it.
pub fn random_query<R: Rng>(rng: &mut R, max_pl: usize) -> Result<(Network, VerificationQuery)> {
    let shape = CnnShape::random_small(rng, max_pl);
    let net = random_cnn(rng, &shape, "random");
    let input_box = random_box(rng, shape.inputs, 1.0);
    let q = random_property(rng, &net, &input_box, 64);
    let query = VerificationQuery::new(crate::graph::NeuronGraph::from_network(&net), input_box, q)?;
    Ok((net, query))
}
