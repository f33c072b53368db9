//! Over-approximating abstractions built by cutting neurons loose.
//!
//! Cutting a neuron deletes its incoming edges and turns it into an extra
//! input bounded by its known range. Hidden neurons that then no longer reach
//! an output are pruned. Any behavior of the original network is reproduced
//! by the abstract one when the cut neurons are fed their original values,
//! so an unsatisfiable abstract query implies an unsatisfiable original one.

use std::sync::Arc;

use crate::bounds::{BoundsMap, Interval};
use crate::error::{Error, Result};
use crate::graph::{NeuronGraph, NeuronId, NeuronOp};
use crate::network::LayerKind;
use crate::query::VerificationQuery;

/// Picks the layer to abstract: the deepest convolution or max-pooling
/// layer not preceded by a hidden weighted-sum layer.
///
/// Weighted-sum layers with a multi-dimensional shape are lowered
/// convolutions and do not end the convolutional prefix.
pub fn select_abstraction_layer(graph: &NeuronGraph) -> Result<usize> {
    let mut chosen = None;
    for (i, info) in graph.layers().iter().enumerate() {
        match info.kind {
            LayerKind::Convolution | LayerKind::MaxPool => chosen = Some(i),
            LayerKind::WeightedSum if info.shape.dims().len() < 2 => break,
            LayerKind::Output => break,
            _ => {}
        }
    }
    chosen.ok_or(Error::NoConvolutionalPrefix)
}

/// One abstract network together with what was cut and pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    graph: Arc<NeuronGraph>,
    /// Cut neurons in ascending id order; they follow the original inputs.
    promoted: Vec<NeuronId>,
    promoted_bounds: Vec<Interval>,
    pruned: Vec<NeuronId>,
    original_inputs: usize,
}

impl Abstraction {
    /// Cuts every neuron of `v` and prunes what no longer reaches an output.
    /// Neurons of `v` must be present, hidden, and have finite bounds.
    pub fn build(original: &Arc<NeuronGraph>, bounds: &BoundsMap, v: &[NeuronId]) -> Result<Self> {
        let mut promoted = v.to_vec();
        promoted.sort();
        promoted.dedup();
        let outputs = original.outputs();
        let mut promoted_bounds = Vec::with_capacity(promoted.len());
        for &id in &promoted {
            match original.neuron(id) {
                None => return Err(Error::Structure(format!("{id} is not in the network"))),
                Some(n) if matches!(n.op, NeuronOp::Input) => {
                    return Err(Error::Structure(format!("{id} is an input")))
                }
                Some(_) if outputs.contains(&id) => {
                    return Err(Error::Structure(format!("{id} is an output")))
                }
                Some(_) => {}
            }
            let b = bounds.get(id);
            if !b.is_finite() {
                return Err(Error::Structure(format!("{id} has unbounded range")));
            }
            promoted_bounds.push(b);
        }
        let graph = if promoted.is_empty() {
            Arc::clone(original)
        } else {
            Arc::new(original.cut_and_prune(&promoted)?.0)
        };
        let pruned = original
            .iter()
            .map(|(id, _)| id)
            .filter(|&id| !graph.contains(id))
            .collect();
        Ok(Abstraction {
            graph,
            promoted,
            promoted_bounds,
            pruned,
            original_inputs: original.inputs().len(),
        })
    }

    pub fn graph(&self) -> &NeuronGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<NeuronGraph> {
        Arc::clone(&self.graph)
    }

    pub fn promoted(&self) -> &[NeuronId] {
        &self.promoted
    }

    /// Ranges attached to the promoted inputs, in [`Abstraction::promoted`] order.
    pub fn promoted_bounds(&self) -> &[Interval] {
        &self.promoted_bounds
    }

    pub fn pruned(&self) -> &[NeuronId] {
        &self.pruned
    }

    /// The abstract query: the original box extended by the promoted ranges.
    pub fn query(&self, original: &VerificationQuery) -> Result<VerificationQuery> {
        let mut input_box = original.input_box().to_vec();
        input_box.extend_from_slice(&self.promoted_bounds);
        VerificationQuery::new(
            self.shared_graph(),
            input_box,
            original.output_constraints().to_vec(),
        )
    }

    /// Projects an abstract input assignment onto the original inputs.
    pub fn lift_cex(&self, abstract_cex: &[f64]) -> Vec<f64> {
        abstract_cex[..self.original_inputs.min(abstract_cex.len())].to_vec()
    }
}

/// The state of an abstraction-refinement run over one layer.
#[derive(Debug, Clone)]
pub struct AbstractionState {
    original: Arc<NeuronGraph>,
    bounds: BoundsMap,
    layer: Option<usize>,
    /// Neurons in the order they are to be restored.
    priority: Vec<NeuronId>,
    current: Abstraction,
}

impl AbstractionState {
    /// Abstracts every present neuron of `layer`. `priority` lists the
    /// layer's neurons in the order refinement restores them; neurons
    /// missing from it are restored last, lowest id first.
    pub fn for_layer(
        original: Arc<NeuronGraph>,
        bounds: BoundsMap,
        layer: usize,
        priority: Vec<NeuronId>,
    ) -> Result<Self> {
        if layer >= original.layers().len() {
            return Err(Error::OutOfRange {
                index: layer,
                size: original.layers().len(),
            });
        }
        let v = original.layer_neurons(layer);
        Self::with_set(original, bounds, Some(layer), v, priority)
    }

    /// Abstracts an arbitrary set of hidden neurons.
    pub fn with_set(
        original: Arc<NeuronGraph>,
        bounds: BoundsMap,
        layer: Option<usize>,
        v: Vec<NeuronId>,
        priority: Vec<NeuronId>,
    ) -> Result<Self> {
        let current = Abstraction::build(&original, &bounds, &v)?;
        let mut full: Vec<NeuronId> = priority
            .into_iter()
            .filter(|id| current.promoted.binary_search(id).is_ok())
            .collect();
        let mut rest: Vec<NeuronId> = current
            .promoted
            .iter()
            .copied()
            .filter(|id| !full.contains(id))
            .collect();
        full.append(&mut rest);
        Ok(AbstractionState {
            original,
            bounds,
            layer,
            priority: full,
            current,
        })
    }

    pub fn original(&self) -> &NeuronGraph {
        &self.original
    }

    pub fn layer(&self) -> Option<usize> {
        self.layer
    }

    pub fn abstraction(&self) -> &Abstraction {
        &self.current
    }

    /// The currently abstract neurons, ascending by id.
    pub fn abstract_set(&self) -> &[NeuronId] {
        &self.current.promoted
    }

    pub fn pruned(&self) -> &[NeuronId] {
        &self.current.pruned
    }

    /// Abstract neurons from the one restored last to the one restored next.
    pub fn refinement_order(&self) -> Vec<NeuronId> {
        let mut order = self.priority.clone();
        order.reverse();
        order
    }

    pub fn is_full_network(&self) -> bool {
        self.current.promoted.is_empty()
    }

    /// Present neurons of the abstract network over those of the original.
    pub fn size_ratio(&self) -> f64 {
        self.current.graph.present_count() as f64 / self.original.present_count() as f64
    }

    /// Restores the next `count` neurons (at least one) and rebuilds.
    pub fn refine(&self, count: usize) -> Result<Self> {
        if self.priority.is_empty() {
            return Err(Error::NothingToRefine);
        }
        let k = count.clamp(1, self.priority.len());
        let priority = self.priority[k..].to_vec();
        let current = Abstraction::build(&self.original, &self.bounds, &priority)?;
        Ok(AbstractionState {
            original: Arc::clone(&self.original),
            bounds: self.bounds.clone(),
            layer: self.layer,
            priority,
            current,
        })
    }

    pub fn lift_cex(&self, abstract_cex: &[f64]) -> Vec<f64> {
        self.current.lift_cex(abstract_cex)
    }
}
