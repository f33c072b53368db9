//! Per-neuron bounds: interval arithmetic and LP-relaxation tightening.

mod relax;
mod tighten;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NeuronGraph, NeuronId, NeuronOp};

pub use relax::{encode_max, encode_relu, MaxParams, Relaxation};
pub use tighten::{encode_query, lp_tighten, QueryEncoding, Tightened};
pub(crate) use tighten::encode_network;

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lo - slack && v <= self.hi + slack
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Intersection; `None` when the two intervals are disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    fn scale(&self, w: f64) -> Interval {
        if w >= 0.0 {
            Interval::new(w * self.lo, w * self.hi)
        } else {
            Interval::new(w * self.hi, w * self.lo)
        }
    }
}

impl From<(f64, f64)> for Interval {
    fn from((lo, hi): (f64, f64)) -> Self {
        Interval { lo, hi }
    }
}

/// Bounds for every id slot of a [`NeuronGraph`]. Absent neurons carry
/// [`Interval::UNBOUNDED`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMap {
    intervals: Vec<Interval>,
}

impl BoundsMap {
    pub fn unbounded(capacity: usize) -> Self {
        BoundsMap {
            intervals: vec![Interval::UNBOUNDED; capacity],
        }
    }

    pub fn get(&self, id: NeuronId) -> Interval {
        self.intervals[id.0]
    }

    pub fn set(&mut self, id: NeuronId, bounds: Interval) {
        self.intervals[id.0] = bounds;
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn as_slice(&self) -> &[Interval] {
        &self.intervals
    }

    /// True if `other` is nowhere wider than `self`.
    pub fn contains_map(&self, other: &BoundsMap) -> bool {
        self.intervals
            .iter()
            .zip(&other.intervals)
            .all(|(a, b)| b.lo >= a.lo && b.hi <= a.hi)
    }

    /// Plain-text dump, one neuron per line: `id,layer,index,lower,upper`.
    pub fn dump(&self, graph: &NeuronGraph) -> String {
        let mut out = String::from("neuron,layer,index,lower,upper\n");
        for (id, _) in graph.iter() {
            let (layer, index) = graph.index_in_layer(id).expect("present neuron");
            let b = self.get(id);
            let _ = writeln!(out, "{},{},{},{:?},{:?}", id.0, layer, index, b.lo, b.hi);
        }
        out
    }
}

/// Interval bounds of one neuron given the bounds of its operands.
pub fn neuron_interval(op: &NeuronOp, bounds: &BoundsMap) -> Interval {
    match op {
        NeuronOp::Input => Interval::UNBOUNDED,
        NeuronOp::Affine { bias, terms } => {
            let mut lo = *bias;
            let mut hi = *bias;
            for &(a, w) in terms {
                let s = bounds.get(a).scale(w);
                lo += s.lo;
                hi += s.hi;
            }
            Interval::new(lo, hi)
        }
        NeuronOp::Relu(a) => {
            let b = bounds.get(*a);
            Interval::new(b.lo.max(0.0), b.hi.max(0.0))
        }
        NeuronOp::Max(args) => args.iter().fold(
            Interval::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            |acc, a| {
                let b = bounds.get(*a);
                Interval::new(acc.lo.max(b.lo), acc.hi.max(b.hi))
            },
        ),
    }
}

/// Forward interval pass from a box over the graph inputs.
pub fn interval_pass(graph: &NeuronGraph, input_box: &[Interval]) -> Result<BoundsMap> {
    if input_box.len() != graph.inputs().len() {
        return Err(Error::Dimension {
            expected: graph.inputs().len(),
            actual: input_box.len(),
        });
    }
    let mut bounds = BoundsMap::unbounded(graph.capacity());
    for (&id, b) in graph.inputs().iter().zip(input_box) {
        if b.lo > b.hi || b.lo.is_nan() || b.hi.is_nan() {
            return Err(Error::Query(format!("empty input interval [{}, {}]", b.lo, b.hi)));
        }
        bounds.set(id, *b);
    }
    let ok = refine_forward(graph, &mut bounds);
    debug_assert!(ok, "plain interval pass cannot produce empty intervals");
    Ok(bounds)
}

/// Recomputes every non-input neuron from its operands and intersects with
/// the bounds already stored. Returns `false` if some interval becomes
/// empty, which means no input in the box reaches the stored bounds.
pub fn refine_forward(graph: &NeuronGraph, bounds: &mut BoundsMap) -> bool {
    for (id, n) in graph.iter() {
        if matches!(n.op, NeuronOp::Input) {
            continue;
        }
        let fresh = neuron_interval(&n.op, bounds);
        match fresh.intersect(&bounds.get(id)) {
            Some(b) => bounds.set(id, b),
            None => {
                // LP-derived bounds can sit a hair away from the interval
                // ones; only a real gap counts as empty.
                let old = bounds.get(id);
                let gap = (old.lo - fresh.hi).max(fresh.lo - old.hi);
                if gap > crate::lp::FEASIBILITY_TOL * (1.0 + old.lo.abs().max(old.hi.abs())) {
                    return false;
                }
                let v = if old.lo > fresh.hi { fresh.hi } else { fresh.lo };
                bounds.set(id, Interval::point(v));
            }
        }
    }
    true
}
