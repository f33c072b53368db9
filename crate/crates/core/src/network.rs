//! Layered feed-forward CNNs: weighted sums, 1-D convolutions, ReLU and
//! non-overlapping max-pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-dimensional layout of a layer, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerShape(Vec<usize>);

impl LayerShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Structure(format!("invalid layer shape {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn flat(len: usize) -> Self {
        Self(vec![len.max(1)])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major coordinates of a flat index.
    pub fn coordinates(&self, flat_index: usize) -> Result<Vec<usize>> {
        let size = self.size();
        if flat_index >= size {
            return Err(Error::OutOfRange {
                index: flat_index,
                size,
            });
        }
        let mut coords = vec![0; self.0.len()];
        let mut rest = flat_index;
        for (c, &d) in coords.iter_mut().zip(&self.0).rev() {
            *c = rest % d;
            rest /= d;
        }
        Ok(coords)
    }

    /// Inverse of [`LayerShape::coordinates`].
    pub fn flat_index(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.0.len() {
            return Err(Error::Dimension {
                expected: self.0.len(),
                actual: coords.len(),
            });
        }
        let mut idx = 0;
        for (&c, &d) in coords.iter().zip(&self.0) {
            if c >= d {
                return Err(Error::OutOfRange { index: c, size: d });
            }
            idx = idx * d + c;
        }
        Ok(idx)
    }
}

impl TryFrom<Vec<usize>> for LayerShape {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<LayerShape> for Vec<usize> {
    fn from(shape: LayerShape) -> Self {
        shape.0
    }
}

/// Sparse affine map `out[i] = bias[i] + sum_j w[i,j] * in[j]`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    rows: Vec<Vec<(usize, f64)>>,
    bias: Vec<f64>,
    in_size: usize,
}

impl Affine {
    /// Builds from `(row, col, value)` triples. Duplicate entries are summed,
    /// zero weights dropped.
    pub fn from_triples(
        out_size: usize,
        in_size: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if bias.len() != out_size {
            return Err(Error::Dimension {
                expected: out_size,
                actual: bias.len(),
            });
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); out_size];
        for (r, c, v) in triples {
            if r >= out_size {
                return Err(Error::OutOfRange {
                    index: r,
                    size: out_size,
                });
            }
            if c >= in_size {
                return Err(Error::OutOfRange {
                    index: c,
                    size: in_size,
                });
            }
            if !v.is_finite() {
                return Err(Error::Structure(format!("non-finite weight at ({r},{c})")));
            }
            rows[r].push((c, v));
        }
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|&(_, v)| v != 0.0);
            *row = merged;
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Structure("non-finite bias".into()));
        }
        Ok(Self {
            rows,
            bias,
            in_size,
        })
    }

    pub fn from_dense(weights: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let in_size = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != in_size) {
            return Err(Error::Structure("ragged weight matrix".into()));
        }
        let triples = weights
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (r, c, v)));
        Self::from_triples(weights.len(), in_size, triples, bias)
    }

    pub fn out_size(&self) -> usize {
        self.rows.len()
    }

    pub fn in_size(&self) -> usize {
        self.in_size
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().map(|&(c, w)| w * input[c]).sum::<f64>())
            .collect()
    }
}

/// Shared 1-D kernel with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Kernel {
    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let k = self.weights.len();
        (0..=input.len() - k)
            .map(|i| {
                self.bias
                    + self
                        .weights
                        .iter()
                        .zip(&input[i..i + k])
                        .map(|(w, u)| w * u)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Same map as an explicit banded weight matrix.
    pub fn to_affine(&self, in_size: usize) -> Result<Affine> {
        let k = self.weights.len();
        let out = in_size + 1 - k;
        let triples = (0..out).flat_map(|i| {
            self.weights
                .iter()
                .enumerate()
                .map(move |(j, &w)| (i, i + j, w))
        });
        Affine::from_triples(out, in_size, triples, vec![self.bias; out])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    WeightedSum,
    Convolution,
    Relu,
    MaxPool,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Input,
    WeightedSum(Affine),
    Convolution(Kernel),
    Relu,
    MaxPool { pool: usize },
    Output(Affine),
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::Input => LayerKind::Input,
            LayerOp::WeightedSum(_) => LayerKind::WeightedSum,
            LayerOp::Convolution(_) => LayerKind::Convolution,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::MaxPool { .. } => LayerKind::MaxPool,
            LayerOp::Output(_) => LayerKind::Output,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub op: LayerOp,
    pub shape: LayerShape,
}

impl Layer {
    pub fn new(op: LayerOp, shape: LayerShape) -> Self {
        Self { op, shape }
    }

    pub fn kind(&self) -> LayerKind {
        self.op.kind()
    }

    pub fn size(&self) -> usize {
        self.shape.size()
    }
}

/// A validated layered network. The first layer is the input layer, the last
/// is a weighted-sum output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    layers: Vec<Layer>,
}

/// Value vectors for every layer of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub layers: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Network {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            name: name.into(),
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let (first, last) = match (self.layers.first(), self.layers.last()) {
            (Some(f), Some(l)) if self.layers.len() >= 2 => (f, l),
            _ => return Err(Error::Structure("network needs input and output layers".into())),
        };
        if first.kind() != LayerKind::Input {
            return Err(Error::Structure("first layer must be the input layer".into()));
        }
        if last.kind() != LayerKind::Output {
            return Err(Error::Structure("last layer must be the output layer".into()));
        }
        for (idx, pair) in self.layers.windows(2).enumerate() {
            let (prev, layer) = (&pair[0], &pair[1]);
            let l = prev.size();
            let t = layer.size();
            let bad = |msg: String| Err(Error::Structure(format!("layer {}: {msg}", idx + 1)));
            match &layer.op {
                LayerOp::Input => return bad("input layer in hidden position".into()),
                LayerOp::WeightedSum(a) | LayerOp::Output(a) => {
                    if a.in_size() != l || a.out_size() != t {
                        return bad(format!(
                            "affine map is {}x{}, expected {t}x{l}",
                            a.out_size(),
                            a.in_size()
                        ));
                    }
                }
                LayerOp::Convolution(k) => {
                    let ks = k.weights.len();
                    if ks == 0 || ks > l || t != l - ks + 1 {
                        return bad(format!("kernel of size {ks} on {l} inputs cannot yield {t}"));
                    }
                    if k.weights.iter().any(|w| !w.is_finite()) || !k.bias.is_finite() {
                        return bad("non-finite kernel".into());
                    }
                }
                LayerOp::Relu => {
                    if t != l {
                        return bad(format!("ReLU size {t} differs from preceding size {l}"));
                    }
                }
                LayerOp::MaxPool { pool } => {
                    if *pool == 0 || l % pool != 0 || t * pool != l {
                        return bad(format!("pool {pool} does not tile {l} into {t}"));
                    }
                }
            }
            if idx + 2 < self.layers.len() && layer.kind() == LayerKind::Output {
                return bad("output layer must be last".into());
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].size()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].size()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Layer::size).sum()
    }

    pub fn evaluate(&self, input: &[f64]) -> Result<Assignment> {
        if input.len() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                actual: input.len(),
            });
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        values.push(input.to_vec());
        for layer in &self.layers[1..] {
            let prev = values.last().expect("input layer present");
            let next = match &layer.op {
                LayerOp::Input => unreachable!("validated"),
                LayerOp::WeightedSum(a) | LayerOp::Output(a) => a.apply(prev),
                LayerOp::Convolution(k) => k.apply(prev),
                LayerOp::Relu => prev.iter().map(|&u| u.max(0.0)).collect(),
                LayerOp::MaxPool { pool } => prev
                    .chunks(*pool)
                    .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
            };
            values.push(next);
        }
        Ok(Assignment { layers: values })
    }

    /// Rewrites every convolution as the equivalent sparse weighted sum.
    pub fn flatten(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let op = match &layer.op {
                LayerOp::Convolution(k) => {
                    LayerOp::WeightedSum(k.to_affine(self.layers[i - 1].size())?)
                }
                other => other.clone(),
            };
            layers.push(Layer::new(op, layer.shape.clone()));
        }
        Network::new(self.name.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn coordinates_row_major() {
        let s = LayerShape::new(vec![13, 13, 1]).unwrap();
        assert_eq!(s.coordinates(0).unwrap(), vec![0, 0, 0]);
        let s = LayerShape::new(vec![2, 3]).unwrap();
        assert_eq!(s.coordinates(4).unwrap(), vec![1, 1]);
        let s = LayerShape::new(vec![4, 4, 2]).unwrap();
        assert_eq!(s.coordinates(31).unwrap(), vec![3, 3, 1]);
        assert!(matches!(s.coordinates(32), Err(Error::OutOfRange { .. })));
        for i in 0..32 {
            assert_eq!(s.flat_index(&s.coordinates(i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(LayerShape::new(vec![]).is_err());
        assert!(LayerShape::new(vec![3, 0]).is_err());
    }

    #[test]
    fn toy_cnn_golden_values() {
        let net = fixtures::toy_cnn();
        let a = net.evaluate(&[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let conv = [1.2, -1.1, 1.2, 0.2];
        for (v, e) in a.layers[1].iter().zip(conv) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(a.layers[2], vec![1.2, 0.0, 1.2, 0.2]);
        assert_eq!(a.layers[3], vec![1.2, 1.2]);
        let expected = [16.2, 7.4, -1.4, 1.8];
        for (v, e) in a.output().iter().zip(expected) {
            assert!((v - e).abs() < 1e-9, "{v} vs {e}");
        }
    }

    #[test]
    fn evaluate_rejects_wrong_length() {
        let net = fixtures::toy_cnn();
        assert!(matches!(
            net.evaluate(&[1.0]),
            Err(Error::Dimension {
                expected: 5,
                actual: 1
            })
        ));
    }

    #[test]
    fn zero_network_is_zero() {
        let layers = vec![
            Layer::new(LayerOp::Input, LayerShape::flat(4)),
            Layer::new(
                LayerOp::Convolution(Kernel {
                    weights: vec![0.0, 0.0],
                    bias: 0.0,
                }),
                LayerShape::flat(3),
            ),
            Layer::new(LayerOp::Relu, LayerShape::flat(3)),
            Layer::new(
                LayerOp::Output(Affine::from_dense(&vec![vec![0.0; 3]; 2], vec![0.0; 2]).unwrap()),
                LayerShape::flat(2),
            ),
        ];
        let net = Network::new("zero", layers).unwrap();
        let a = net.evaluate(&[3.0, -2.0, 7.5, 1.0]).unwrap();
        assert!(a.layers[1..].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_conv_is_banded() {
        let net = fixtures::toy_cnn().flatten().unwrap();
        let LayerOp::WeightedSum(a) = &net.layers()[1].op else {
            panic!("conv not lowered");
        };
        assert_eq!((a.out_size(), a.in_size()), (4, 5));
        for i in 0..4 {
            assert_eq!(a.row(i), &[(i, 1.0), (i + 1, -1.3)]);
        }
        assert_eq!(a.bias(), &[0.2; 4]);

        let net = fixtures::lp_example_network().flatten().unwrap();
        let LayerOp::WeightedSum(a) = &net.layers()[1].op else {
            panic!("conv not lowered");
        };
        assert_eq!((a.out_size(), a.in_size()), (3, 4));
        assert_eq!(a.row(2), &[(2, 1.0), (3, -1.0)]);
    }

    #[test]
    fn flatten_without_conv_is_identity() {
        let net = fixtures::skip_example_network();
        assert_eq!(net.flatten().unwrap(), net);
    }

    #[test]
    fn validation_catches_mismatches() {
        let bad_pool = vec![
            Layer::new(LayerOp::Input, LayerShape::flat(5)),
            Layer::new(LayerOp::MaxPool { pool: 2 }, LayerShape::flat(2)),
            Layer::new(
                LayerOp::Output(Affine::from_dense(&[vec![1.0, 1.0]], vec![0.0]).unwrap()),
                LayerShape::flat(1),
            ),
        ];
        assert!(Network::new("bad", bad_pool).is_err());
        let no_output = vec![
            Layer::new(LayerOp::Input, LayerShape::flat(2)),
            Layer::new(LayerOp::Relu, LayerShape::flat(2)),
        ];
        assert!(Network::new("bad", no_output).is_err());
    }
}
