//! LP encoding of a whole query and per-neuron bound tightening.

use rayon::prelude::*;
use tracing::{debug, warn};

use super::relax::{encode_max, encode_relu, Relaxation};
use super::{refine_forward, BoundsMap, Interval};
use crate::error::Result;
use crate::graph::{NeuronId, NeuronOp};
use crate::lp::{LinearExpr, LpOutcome, LpProblem, Relation, Sense, Simplex, VarId};
use crate::query::VerificationQuery;

/// LP relaxation of a query: one variable per present neuron, exact affine
/// rows, relaxed piecewise-linear neurons and the output constraints.
#[derive(Debug, Clone)]
pub struct QueryEncoding {
    pub problem: LpProblem,
    /// LP variable of each id slot; `None` for absent neurons.
    pub vars: Vec<Option<VarId>>,
}

impl QueryEncoding {
    pub fn var(&self, id: NeuronId) -> VarId {
        self.vars[id.0].expect("neuron is encoded")
    }
}

/// Encodes `query` using `bounds` both as variable bounds and as the input
/// to the relaxations.
pub fn encode_query(
    query: &VerificationQuery,
    bounds: &BoundsMap,
    relaxation: Relaxation,
) -> QueryEncoding {
    let mut enc = encode_network(query, bounds, relaxation, &|_| false);
    let outputs = query.graph().outputs();
    for atom in query.output_constraints() {
        let expr = LinearExpr::from_terms(
            atom.terms.iter().map(|&(k, c)| (enc.var(outputs[k]), c)),
            atom.constant,
        );
        enc.problem.add_constraint(expr, Relation::Le);
    }
    enc
}

/// Encodes the network of `query` without its output constraints.
/// Piecewise-linear neurons for which `skip` holds get no constraints at
/// all; the caller encodes them.
pub(crate) fn encode_network(
    query: &VerificationQuery,
    bounds: &BoundsMap,
    relaxation: Relaxation,
    skip: &dyn Fn(NeuronId) -> bool,
) -> QueryEncoding {
    let graph = query.graph();
    let mut problem = LpProblem::new();
    let mut vars = vec![None; graph.capacity()];
    let mut box_of = vec![None; graph.capacity()];
    for (&id, b) in graph.inputs().iter().zip(query.input_box()) {
        box_of[id.0] = Some(*b);
    }
    for (id, _) in graph.iter() {
        let mut b = bounds.get(id);
        if let Some(p) = box_of[id.0] {
            b = b.intersect(&p).unwrap_or(p);
        }
        vars[id.0] = Some(problem.add_named_var(format!("{id}"), b.lo, b.hi));
    }
    let v = |id: NeuronId| vars[id.0].expect("operand is present");
    for (id, n) in graph.iter() {
        match &n.op {
            NeuronOp::Input => {}
            NeuronOp::Affine { bias, terms } => {
                let expr = LinearExpr::from_terms(
                    std::iter::once((v(id), 1.0)).chain(terms.iter().map(|&(a, w)| (v(a), -w))),
                    -bias,
                );
                problem.add_constraint(expr, Relation::Eq);
            }
            _ if skip(id) => {}
            NeuronOp::Relu(a) => {
                for c in encode_relu(v(*a), v(id), bounds.get(*a)) {
                    problem.add_constraint(c.expr, c.relation);
                }
            }
            NeuronOp::Max(args) => {
                let args: Vec<(VarId, Interval)> =
                    args.iter().map(|&a| (v(a), bounds.get(a))).collect();
                for c in encode_max(&args, v(id), relaxation) {
                    problem.add_constraint(c.expr, c.relation);
                }
            }
        }
    }
    QueryEncoding { problem, vars }
}

/// Result of [`lp_tighten`].
#[derive(Debug, Clone, PartialEq)]
pub enum Tightened {
    Bounds(BoundsMap),
    /// The relaxation admits no point, so the query has no counterexample.
    Infeasible,
}

/// Outward slack added to LP optima before they are used as bounds.
fn slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Tightens `bounds` layer by layer: for every non-input neuron the
/// relaxation of the whole query is maximized and minimized over that
/// neuron. Neurons of one layer are solved in parallel from a shared
/// feasible basis built with the bounds of all earlier layers. Bounds only
/// ever shrink.
pub fn lp_tighten(
    query: &VerificationQuery,
    bounds: &BoundsMap,
    relaxation: Relaxation,
) -> Result<Tightened> {
    let graph = query.graph();
    let mut current = bounds.clone();
    for (&id, b) in graph.inputs().iter().zip(query.input_box()) {
        current.set(id, current.get(id).intersect(b).unwrap_or(*b));
    }
    if !refine_forward(graph, &mut current) {
        return Ok(Tightened::Infeasible);
    }
    for layer in 0..graph.layers().len() {
        let ids: Vec<NeuronId> = graph
            .layer_neurons(layer)
            .into_iter()
            .filter(|&id| !matches!(graph.neuron(id).map(|n| &n.op), Some(NeuronOp::Input)))
            .collect();
        if ids.is_empty() {
            continue;
        }
        let enc = encode_query(query, &current, relaxation);
        let base = match Simplex::feasible(&enc.problem) {
            Ok(Some(s)) => s,
            Ok(None) => return Ok(Tightened::Infeasible),
            Err(e) => {
                warn!(layer, error = %e, "phase one failed, keeping bounds of this layer");
                continue;
            }
        };
        let results: Vec<(NeuronId, Option<f64>, Option<f64>)> = ids
            .par_iter()
            .map(|&id| {
                let obj = LinearExpr::var(enc.var(id));
                let solve = |sense| match base.clone().optimize(&obj, sense) {
                    Ok(LpOutcome::Optimal { value, .. }) => Some(value),
                    Ok(_) => None,
                    Err(e) => {
                        warn!(neuron = %id, error = %e, "LP failed, keeping bound");
                        None
                    }
                };
                (id, solve(Sense::Minimize), solve(Sense::Maximize))
            })
            .collect();
        for (id, lo, hi) in results {
            let old = current.get(id);
            let mut new = old;
            if let Some(lo) = lo {
                new.lo = new.lo.max(lo - slack(lo));
            }
            if let Some(hi) = hi {
                new.hi = new.hi.min(hi + slack(hi));
            }
            if new.lo > new.hi {
                let mid = new.midpoint();
                new = Interval::point(mid.clamp(old.lo, old.hi));
            }
            current.set(id, new);
        }
        debug!(layer, neurons = ids.len(), "tightened layer");
        if !refine_forward(graph, &mut current) {
            return Ok(Tightened::Infeasible);
        }
    }
    Ok(Tightened::Bounds(current))
}
