//! Verification queries `<P, N, Q>` and verdicts.
//!
//! `P` is a box over the network inputs and `Q` a conjunction of linear atoms
//! over the outputs, each in the canonical form `sum_k c_k y_k + c <= 0`. A
//! query is satisfiable when some input in the box drives the outputs into
//! `Q`; such an input is a counterexample.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::Interval;
use crate::error::{Error, Result};
use crate::graph::NeuronGraph;
use crate::network::Network;

/// Tolerance used when checking a candidate counterexample concretely.
pub const CONCRETE_TOL: f64 = 1e-9;

/// One atom `sum_k coeff_k * y[index_k] + constant <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConstraint {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl OutputConstraint {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        OutputConstraint { terms, constant }
    }

    /// `y[i] - y[j] <= 0`.
    pub fn le(i: usize, j: usize) -> Self {
        OutputConstraint::new(vec![(i, 1.0), (j, -1.0)], 0.0)
    }

    /// `y[i] >= value`.
    pub fn at_least(i: usize, value: f64) -> Self {
        OutputConstraint::new(vec![(i, -1.0)], value)
    }

    /// `y[i] <= value`.
    pub fn at_most(i: usize, value: f64) -> Self {
        OutputConstraint::new(vec![(i, 1.0)], -value)
    }

    /// Left-hand side at `y`; the atom holds when this is `<= 0`.
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(k, c)| c * y[k]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct VerificationQuery {
    graph: Arc<NeuronGraph>,
    input_box: Vec<Interval>,
    output: Vec<OutputConstraint>,
}

impl VerificationQuery {
    pub fn new(
        graph: impl Into<Arc<NeuronGraph>>,
        input_box: Vec<Interval>,
        output: Vec<OutputConstraint>,
    ) -> Result<Self> {
        let graph = graph.into();
        if input_box.len() != graph.inputs().len() {
            return Err(Error::Dimension {
                expected: graph.inputs().len(),
                actual: input_box.len(),
            });
        }
        for (i, b) in input_box.iter().enumerate() {
            if !(b.lo <= b.hi) {
                return Err(Error::Query(format!(
                    "input {i} has empty range [{}, {}]",
                    b.lo, b.hi
                )));
            }
        }
        let m = graph.outputs().len();
        for atom in &output {
            for &(k, c) in &atom.terms {
                if k >= m {
                    return Err(Error::OutOfRange { index: k, size: m });
                }
                if !c.is_finite() {
                    return Err(Error::Query(format!("non-finite coefficient on y{k}")));
                }
            }
            if !atom.constant.is_finite() {
                return Err(Error::Query("non-finite constant in output constraint".into()));
            }
        }
        Ok(VerificationQuery {
            graph,
            input_box,
            output,
        })
    }

    pub fn graph(&self) -> &NeuronGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<NeuronGraph> {
        Arc::clone(&self.graph)
    }

    pub fn input_box(&self) -> &[Interval] {
        &self.input_box
    }

    pub fn output_constraints(&self) -> &[OutputConstraint] {
        &self.output
    }

    /// Same network and `Q` with a different input box.
    pub fn with_box(&self, input_box: Vec<Interval>) -> Result<Self> {
        Self::new(Arc::clone(&self.graph), input_box, self.output.clone())
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.len() == self.input_box.len()
            && x
                .iter()
                .zip(&self.input_box)
                .all(|(&v, b)| b.contains(v, CONCRETE_TOL))
    }

    pub fn outputs_satisfy(&self, y: &[f64]) -> bool {
        self.output.iter().all(|a| a.eval(y) <= CONCRETE_TOL)
    }

    /// True iff `x` lies in `P` and the network's outputs at `x` satisfy `Q`.
    pub fn check_concrete(&self, x: &[f64]) -> bool {
        if !self.in_box(x) {
            return false;
        }
        match self.graph.evaluate_outputs(x) {
            Ok(y) => self.outputs_satisfy(&y),
            Err(_) => false,
        }
    }
}

/// A targeted robustness query together with the labels it compares.
#[derive(Debug, Clone)]
pub struct AdversarialQuery {
    pub query: VerificationQuery,
    /// Label predicted at the reference point.
    pub predicted: usize,
    /// Runner-up label that the query tries to push above `predicted`.
    pub target: usize,
}

/// Index of the largest value and of the second largest, ties going to the
/// lower index.
pub fn top_two(values: &[f64]) -> Option<(usize, usize)> {
    if values.len() < 2 {
        return None;
    }
    let mut first = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[first] {
            first = i;
        }
    }
    let mut second = if first == 0 { 1 } else { 0 };
    for (i, &v) in values.iter().enumerate() {
        if i != first && v > values[second] {
            second = i;
        }
    }
    Some((first, second))
}

/// Builds the query "some input within `eps` of `x0` (in the l-infinity
/// norm, clipped to `domain`) scores the runner-up label at least as high
/// as the predicted one".
pub fn build_adversarial(
    net: &Network,
    x0: &[f64],
    eps: f64,
    domain: Interval,
) -> Result<AdversarialQuery> {
    if !(eps >= 0.0) {
        return Err(Error::Query(format!("eps must be non-negative, got {eps}")));
    }
    if net.output_size() < 2 {
        return Err(Error::Query(
            "adversarial queries need at least two outputs".into(),
        ));
    }
    let y = net.evaluate(x0)?.output().to_vec();
    let (predicted, target) = top_two(&y).expect("at least two outputs");
    let input_box = x0
        .iter()
        .map(|&v| {
            let lo = (v - eps).max(domain.lo);
            let hi = (v + eps).min(domain.hi);
            if lo <= hi {
                Ok(Interval::new(lo, hi))
            } else {
                Err(Error::Query(format!(
                    "reference value {v} lies outside the input domain"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let query = VerificationQuery::new(
        NeuronGraph::from_network(net),
        input_box,
        vec![OutputConstraint::le(predicted, target)],
    )?;
    Ok(AdversarialQuery {
        query,
        predicted,
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Sat,
    Unsat,
    Timeout,
}

/// Where an abstraction-refinement run reached its conclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The bound-tightening LP was already infeasible.
    LpInfeasible,
    /// Decided on the initial abstraction.
    AllAbstract,
    /// Decided on an abstraction after some refinement.
    PartialRefinement,
    /// Decided on the original network.
    FullNetwork,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictStats {
    pub runtime_secs: f64,
    pub refinements: usize,
    /// Present neurons of the last verified network over those of the original.
    pub size_ratio: f64,
    /// Branch-and-bound nodes explored, summed over all verifier calls.
    pub nodes: usize,
    /// Set when the search hit a leaf whose LP point failed the concrete
    /// check, i.e. the answer depends on floating-point tolerance.
    pub tolerance_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub counterexample: Option<Vec<f64>>,
    pub solve_status: Option<SolveStatus>,
    pub stats: VerdictStats,
}

impl Verdict {
    pub fn sat(cex: Vec<f64>) -> Self {
        Verdict {
            status: Status::Sat,
            counterexample: Some(cex),
            solve_status: None,
            stats: VerdictStats::default(),
        }
    }

    pub fn unsat() -> Self {
        Verdict {
            status: Status::Unsat,
            counterexample: None,
            solve_status: None,
            stats: VerdictStats::default(),
        }
    }

    pub fn timeout() -> Self {
        Verdict {
            status: Status::Timeout,
            counterexample: None,
            solve_status: None,
            stats: VerdictStats::default(),
        }
    }

    pub fn is_sat(&self) -> bool {
        self.status == Status::Sat
    }

    pub fn is_unsat(&self) -> bool {
        self.status == Status::Unsat
    }
}
