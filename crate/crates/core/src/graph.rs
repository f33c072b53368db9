//! Neuron-level view of a network.
//!
//! Abstraction cuts individual neurons loose from their layer, so the
//! verifier and the bound machinery work on this lowered form instead of the
//! layered [`Network`]. Neuron ids are assigned layer by layer and every
//! operand of a neuron has a smaller id, so id order is a topological order.
//! Ids are stable across abstraction: an abstract graph keeps the ids of the
//! graph it was derived from and simply marks removed neurons as absent.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerOp, LayerShape, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId(pub usize);

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NeuronOp {
    Input,
    Affine {
        bias: f64,
        terms: Vec<(NeuronId, f64)>,
    },
    Relu(NeuronId),
    Max(Vec<NeuronId>),
}

impl NeuronOp {
    pub fn operands(&self) -> Vec<NeuronId> {
        match self {
            NeuronOp::Input => Vec::new(),
            NeuronOp::Affine { terms, .. } => terms.iter().map(|&(id, _)| id).collect(),
            NeuronOp::Relu(a) => vec![*a],
            NeuronOp::Max(a) => a.clone(),
        }
    }

    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, NeuronOp::Relu(_) | NeuronOp::Max(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub op: NeuronOp,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub kind: LayerKind,
    pub shape: LayerShape,
    /// Ids of the layer's neurons in flat (row-major) order.
    pub ids: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGraph {
    neurons: Vec<Option<Neuron>>,
    layers: Vec<LayerInfo>,
    inputs: Vec<NeuronId>,
    outputs: Vec<NeuronId>,
}

impl NeuronGraph {
    /// Builds a graph from explicit per-layer neuron ops. Each entry of
    /// `layers` is `(kind, shape, ops)` with `ops.len() == shape.size()`.
    /// The first layer must consist of inputs and the last layer is taken as
    /// the output layer.
    pub fn from_layers(layers: Vec<(LayerKind, LayerShape, Vec<NeuronOp>)>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Structure("graph needs input and output layers".into()));
        }
        let mut neurons = Vec::new();
        let mut infos = Vec::with_capacity(layers.len());
        for (li, (kind, shape, ops)) in layers.into_iter().enumerate() {
            if ops.len() != shape.size() {
                return Err(Error::Dimension {
                    expected: shape.size(),
                    actual: ops.len(),
                });
            }
            let start = neurons.len();
            for op in ops {
                if (li == 0) != matches!(op, NeuronOp::Input) {
                    return Err(Error::Structure(format!(
                        "layer {li}: inputs must appear exactly in the first layer"
                    )));
                }
                for id in op.operands() {
                    if id.0 >= start {
                        return Err(Error::Structure(format!(
                            "layer {li}: operand {id} does not precede its neuron"
                        )));
                    }
                }
                if let NeuronOp::Max(a) = &op {
                    if a.is_empty() {
                        return Err(Error::Structure("empty max".into()));
                    }
                }
                neurons.push(Some(Neuron { op, layer: li }));
            }
            infos.push(LayerInfo {
                kind,
                shape,
                ids: start..neurons.len(),
            });
        }
        let inputs = infos[0].ids.clone().map(NeuronId).collect();
        let outputs = infos[infos.len() - 1].ids.clone().map(NeuronId).collect();
        Ok(Self {
            neurons,
            layers: infos,
            inputs,
            outputs,
        })
    }

    pub fn from_network(net: &Network) -> Self {
        let mut layers = Vec::with_capacity(net.layers().len());
        let mut offset = 0usize;
        let mut prev_offset = 0usize;
        for layer in net.layers() {
            let prev = |j: usize| NeuronId(prev_offset + j);
            let ops: Vec<NeuronOp> = match &layer.op {
                LayerOp::Input => vec![NeuronOp::Input; layer.size()],
                LayerOp::WeightedSum(a) | LayerOp::Output(a) => (0..a.out_size())
                    .map(|i| NeuronOp::Affine {
                        bias: a.bias()[i],
                        terms: a.row(i).iter().map(|&(c, w)| (prev(c), w)).collect(),
                    })
                    .collect(),
                LayerOp::Convolution(k) => (0..layer.size())
                    .map(|i| NeuronOp::Affine {
                        bias: k.bias,
                        terms: k
                            .weights
                            .iter()
                            .enumerate()
                            .filter(|(_, &w)| w != 0.0)
                            .map(|(j, &w)| (prev(i + j), w))
                            .collect(),
                    })
                    .collect(),
                LayerOp::Relu => (0..layer.size()).map(|i| NeuronOp::Relu(prev(i))).collect(),
                LayerOp::MaxPool { pool } => (0..layer.size())
                    .map(|i| NeuronOp::Max((0..*pool).map(|j| prev(i * pool + j)).collect()))
                    .collect(),
            };
            layers.push((layer.kind(), layer.shape.clone(), ops));
            prev_offset = offset;
            offset += layer.size();
        }
        Self::from_layers(layers).expect("validated network lowers to a valid graph")
    }

    /// Number of id slots, including absent neurons.
    pub fn capacity(&self) -> usize {
        self.neurons.len()
    }

    pub fn neuron(&self, id: NeuronId) -> Option<&Neuron> {
        self.neurons.get(id.0).and_then(Option::as_ref)
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.neuron(id).is_some()
    }

    /// Present neurons in topological order.
    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, &Neuron)> + '_ {
        self.neurons
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|n| (NeuronId(i), n)))
    }

    pub fn present_count(&self) -> usize {
        self.neurons.iter().filter(|n| n.is_some()).count()
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    /// Present neurons of one layer, in flat order.
    pub fn layer_neurons(&self, layer: usize) -> Vec<NeuronId> {
        self.layers[layer]
            .ids
            .clone()
            .map(NeuronId)
            .filter(|&id| self.contains(id))
            .collect()
    }

    /// Position of a neuron inside its layer.
    pub fn index_in_layer(&self, id: NeuronId) -> Option<(usize, usize)> {
        let layer = self.neuron(id)?.layer;
        Some((layer, id.0 - self.layers[layer].ids.start))
    }

    pub fn inputs(&self) -> &[NeuronId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NeuronId] {
        &self.outputs
    }

    pub fn piecewise_linear(&self) -> impl Iterator<Item = (NeuronId, &Neuron)> + '_ {
        self.iter().filter(|(_, n)| n.op.is_piecewise_linear())
    }

    /// Evaluates all present neurons. `inputs` follows [`NeuronGraph::inputs`].
    /// Absent neurons are reported as NaN.
    pub fn evaluate(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Dimension {
                expected: self.inputs.len(),
                actual: inputs.len(),
            });
        }
        let mut values = vec![f64::NAN; self.neurons.len()];
        for (&id, &v) in self.inputs.iter().zip(inputs) {
            values[id.0] = v;
        }
        for (id, n) in self.iter() {
            values[id.0] = match &n.op {
                NeuronOp::Input => values[id.0],
                NeuronOp::Affine { bias, terms } => {
                    bias + terms.iter().map(|&(a, w)| w * values[a.0]).sum::<f64>()
                }
                NeuronOp::Relu(a) => values[a.0].max(0.0),
                NeuronOp::Max(a) => a
                    .iter()
                    .map(|x| values[x.0])
                    .fold(f64::NEG_INFINITY, f64::max),
            };
        }
        Ok(values)
    }

    pub fn evaluate_outputs(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let values = self.evaluate(inputs)?;
        Ok(self.outputs.iter().map(|id| values[id.0]).collect())
    }

    /// Turns the given neurons into free inputs (appended after the current
    /// inputs in id order) and drops every hidden neuron that no longer
    /// reaches an output. Returns the new graph and the removed ids.
    pub(crate) fn cut_and_prune(&self, promote: &[NeuronId]) -> Result<(Self, Vec<NeuronId>)> {
        let mut g = self.clone();
        let mut promoted: Vec<NeuronId> = promote.to_vec();
        promoted.sort();
        promoted.dedup();
        for &id in &promoted {
            match g.neurons.get_mut(id.0).and_then(Option::as_mut) {
                Some(n) if matches!(n.op, NeuronOp::Input) => {
                    return Err(Error::Structure(format!("{id} is already an input")))
                }
                Some(n) => n.op = NeuronOp::Input,
                None => return Err(Error::Structure(format!("{id} is not in the graph"))),
            }
            g.inputs.push(id);
        }

        let mut live = vec![false; g.neurons.len()];
        for &o in &g.outputs {
            live[o.0] = true;
        }
        for i in (0..g.neurons.len()).rev() {
            if !live[i] {
                continue;
            }
            if let Some(n) = &g.neurons[i] {
                for a in n.op.operands() {
                    live[a.0] = true;
                }
            }
        }
        let mut removed = Vec::new();
        for (i, slot) in g.neurons.iter_mut().enumerate() {
            let keep = match slot {
                None => continue,
                Some(n) => live[i] || matches!(n.op, NeuronOp::Input),
            };
            if !keep {
                *slot = None;
                removed.push(NeuronId(i));
            }
        }
        Ok((g, removed))
    }

    /// True if every hidden present neuron has a directed path to an output.
    pub fn all_hidden_reach_output(&self) -> bool {
        let mut live = vec![false; self.neurons.len()];
        for &o in &self.outputs {
            live[o.0] = true;
        }
        for i in (0..self.neurons.len()).rev() {
            if live[i] {
                if let Some(n) = &self.neurons[i] {
                    for a in n.op.operands() {
                        live[a.0] = true;
                    }
                }
            }
        }
        self.iter()
            .all(|(id, n)| live[id.0] || matches!(n.op, NeuronOp::Input))
    }
}

impl From<&Network> for NeuronGraph {
    fn from(net: &Network) -> Self {
        Self::from_network(net)
    }
}
