//! Complete satisfiability check by branch and bound over the linear phases
//! of ReLU and max neurons.
//!
//! Each search node fixes the phases of some piecewise-linear neurons and
//! solves an LP: decided neurons are encoded exactly, the rest by their
//! relaxation over the node's interval bounds. The LP minimizes a slack `t`
//! with every output atom `<= t <= 0`, so its point sits as deep inside `Q`
//! as the relaxation allows. An infeasible LP closes the node. Otherwise
//! the input part of the LP point is checked on the concrete network, and
//! if that fails the search splits the most violated undecided neuron.

use std::collections::HashMap;
use std::time::Instant;

use tracing::{debug, trace};

use crate::bounds::{
    encode_network, interval_pass, lp_tighten, refine_forward, BoundsMap, Interval, MaxParams,
    Relaxation, Tightened,
};
use crate::error::Result;
use crate::graph::{NeuronId, NeuronOp};
use crate::lp::{LinearExpr, LpOutcome, Relation, Sense};
use crate::query::{Verdict, VerdictStats, VerificationQuery};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub relaxation: Relaxation,
    pub deadline: Option<Instant>,
    /// Run LP bound tightening on the query before searching.
    pub tighten_root: bool,
    /// Extra sound bounds, indexed by the query graph's neuron ids, that are
    /// intersected with the interval bounds at the root.
    pub hint: Option<BoundsMap>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            relaxation: Relaxation::New,
            deadline: None,
            tighten_root: false,
            hint: None,
        }
    }
}

/// Linear piece chosen for a piecewise-linear neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// ReLU input non-negative, output equals input.
    Active,
    /// ReLU input non-positive, output zero.
    Inactive,
    /// Max attained by the argument at this position.
    Pick(usize),
}

/// Picks the neuron to split on: the largest violation, ties going to the
/// lowest id. `None` for an empty candidate list.
pub fn split_heuristic(candidates: &[(NeuronId, f64)]) -> Option<NeuronId> {
    candidates
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
                c
            } else {
                best
            }
        })
        .map(|(id, _)| id)
}

/// Verifies with default options and an optional deadline.
pub fn verify(query: &VerificationQuery, deadline: Option<Instant>) -> Result<Verdict> {
    verify_with(
        query,
        &VerifyOptions {
            deadline,
            ..VerifyOptions::default()
        },
    )
}

pub fn verify_with(query: &VerificationQuery, opts: &VerifyOptions) -> Result<Verdict> {
    let start = Instant::now();
    let mut stats = VerdictStats::default();
    let finish = |mut v: Verdict, mut stats: VerdictStats| {
        stats.runtime_secs = start.elapsed().as_secs_f64();
        v.stats = stats;
        v
    };

    let Some(root) = root_bounds(query, opts)? else {
        return Ok(finish(Verdict::unsat(), stats));
    };

    let mut stack: Vec<Vec<(NeuronId, Phase)>> = vec![Vec::new()];
    while let Some(decisions) = stack.pop() {
        if opts.deadline.is_some_and(|d| Instant::now() >= d) {
            debug!(nodes = stats.nodes, "deadline reached");
            return Ok(finish(Verdict::timeout(), stats));
        }
        stats.nodes += 1;
        let Some(node) = solve_node(query, &root, &decisions, opts.relaxation)? else {
            continue;
        };

        let candidate: Vec<f64> = query
            .graph()
            .inputs()
            .iter()
            .zip(query.input_box())
            .map(|(id, b)| node.point[node.var[id.0]].clamp(b.lo, b.hi))
            .collect();
        if query.check_concrete(&candidate) {
            debug!(nodes = stats.nodes, depth = decisions.len(), "counterexample found");
            return Ok(finish(Verdict::sat(candidate), stats));
        }

        let open = open_constraints(query, &node, &decisions);
        let Some(split) = split_heuristic(&open) else {
            // Every phase is fixed, so the LP was exact and its point only
            // failed the concrete check by rounding.
            trace!(depth = decisions.len(), "exact leaf failed concrete check");
            stats.tolerance_limited = true;
            continue;
        };
        let mut children = phases_in_order(query, &node, split);
        children.reverse();
        for phase in children {
            let mut next = decisions.clone();
            next.push((split, phase));
            stack.push(next);
        }
    }
    Ok(finish(Verdict::unsat(), stats))
}

/// Interval bounds of the query intersected with the hint and optionally
/// LP-tightened. `None` when they already prove the query unsatisfiable.
fn root_bounds(query: &VerificationQuery, opts: &VerifyOptions) -> Result<Option<BoundsMap>> {
    let graph = query.graph();
    let mut root = interval_pass(graph, query.input_box())?;
    if let Some(hint) = &opts.hint {
        for (id, _) in graph.iter() {
            if id.0 < hint.len() {
                match root.get(id).intersect(&hint.get(id)) {
                    Some(b) => root.set(id, b),
                    None => return Ok(None),
                }
            }
        }
        if !refine_forward(graph, &mut root) {
            return Ok(None);
        }
    }
    if opts.tighten_root {
        match lp_tighten(query, &root, opts.relaxation)? {
            Tightened::Bounds(b) => root = b,
            Tightened::Infeasible => return Ok(None),
        }
    }
    Ok(Some(root))
}

struct Node {
    bounds: BoundsMap,
    point: Vec<f64>,
    /// LP column of each id slot (`usize::MAX` for absent neurons).
    var: Vec<usize>,
}

impl Node {
    fn value(&self, id: NeuronId) -> f64 {
        self.point[self.var[id.0]]
    }
}

fn solve_node(
    query: &VerificationQuery,
    root: &BoundsMap,
    decisions: &[(NeuronId, Phase)],
    relaxation: Relaxation,
) -> Result<Option<Node>> {
    let graph = query.graph();
    let mut bounds = root.clone();
    for &(id, phase) in decisions {
        let op = &graph.neuron(id).expect("decided neuron is present").op;
        let restricted = match (op, phase) {
            (NeuronOp::Relu(a), Phase::Active) => {
                Some((*a, bounds.get(*a).intersect(&Interval::new(0.0, f64::INFINITY))))
            }
            (NeuronOp::Relu(a), Phase::Inactive) => {
                Some((*a, bounds.get(*a).intersect(&Interval::new(f64::NEG_INFINITY, 0.0))))
            }
            (NeuronOp::Max(args), Phase::Pick(j)) => {
                let l_max = args.iter().map(|&a| bounds.get(a).lo).fold(f64::NEG_INFINITY, f64::max);
                let aj = args[j];
                Some((aj, bounds.get(aj).intersect(&Interval::new(l_max, f64::INFINITY))))
            }
            _ => None,
        };
        match restricted {
            Some((a, Some(b))) => bounds.set(a, b),
            Some((_, None)) => return Ok(None),
            None => unreachable!("phase does not match neuron kind"),
        }
    }
    if !refine_forward(graph, &mut bounds) {
        return Ok(None);
    }

    let decided: HashMap<NeuronId, Phase> = decisions.iter().copied().collect();
    let mut enc = encode_network(query, &bounds, relaxation, &|id| decided.contains_key(&id));
    for &(id, phase) in decisions {
        let b = enc.var(id);
        match (&graph.neuron(id).unwrap().op, phase) {
            (NeuronOp::Relu(a), Phase::Active) => {
                enc.problem
                    .add_constraint(LinearExpr::var(b).with(enc.var(*a), -1.0), Relation::Eq);
            }
            (NeuronOp::Relu(_), Phase::Inactive) => {
                enc.problem.add_constraint(LinearExpr::var(b), Relation::Eq);
            }
            (NeuronOp::Max(args), Phase::Pick(j)) => {
                let aj = enc.var(args[j]);
                enc.problem
                    .add_constraint(LinearExpr::var(b).with(aj, -1.0), Relation::Eq);
                for (i, &a) in args.iter().enumerate() {
                    if i != j {
                        enc.problem
                            .add_constraint(LinearExpr::var(aj).with(enc.var(a), -1.0), Relation::Ge);
                    }
                }
            }
            _ => unreachable!("phase does not match neuron kind"),
        }
    }
    let atoms = query.output_constraints();
    if !atoms.is_empty() {
        let t = enc.problem.add_var(-1.0, 0.0);
        let outputs = graph.outputs();
        for atom in atoms {
            let expr = LinearExpr::from_terms(
                atom.terms
                    .iter()
                    .map(|&(k, c)| (enc.var(outputs[k]), c))
                    .chain(std::iter::once((t, -1.0))),
                atom.constant,
            );
            enc.problem.add_constraint(expr, Relation::Le);
        }
        enc.problem.set_objective(LinearExpr::var(t), Sense::Minimize);
    }
    match enc.problem.solve()? {
        LpOutcome::Optimal { point, .. } => Ok(Some(Node {
            bounds,
            point,
            var: enc.vars.iter().map(|v| v.map_or(usize::MAX, |v| v.0)).collect(),
        })),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => unreachable!("objective is a bounded variable"),
    }
}

/// Undecided piecewise-linear neurons whose phase is not fixed by the node
/// bounds, with their violation at the LP point.
fn open_constraints(
    query: &VerificationQuery,
    node: &Node,
    decisions: &[(NeuronId, Phase)],
) -> Vec<(NeuronId, f64)> {
    let mut open = Vec::new();
    for (id, n) in query.graph().piecewise_linear() {
        if decisions.iter().any(|&(d, _)| d == id) {
            continue;
        }
        let b = node.value(id);
        match &n.op {
            NeuronOp::Relu(a) => {
                let iv = node.bounds.get(*a);
                if iv.lo < 0.0 && iv.hi > 0.0 {
                    open.push((id, (b - node.value(*a).max(0.0)).abs()));
                }
            }
            NeuronOp::Max(args) => {
                let ivs: Vec<Interval> = args.iter().map(|&a| node.bounds.get(a)).collect();
                if !MaxParams::new(&ivs).is_trivial() {
                    let m = args
                        .iter()
                        .map(|&a| node.value(a))
                        .fold(f64::NEG_INFINITY, f64::max);
                    open.push((id, (b - m).abs()));
                }
            }
            _ => {}
        }
    }
    open
}

/// Feasible phases of `id`, the one matching the LP point first.
fn phases_in_order(query: &VerificationQuery, node: &Node, id: NeuronId) -> Vec<Phase> {
    match &query.graph().neuron(id).unwrap().op {
        NeuronOp::Relu(a) => {
            if node.value(*a) >= 0.0 {
                vec![Phase::Active, Phase::Inactive]
            } else {
                vec![Phase::Inactive, Phase::Active]
            }
        }
        NeuronOp::Max(args) => {
            let l_max = args
                .iter()
                .map(|&a| node.bounds.get(a).lo)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut picks: Vec<usize> = (0..args.len())
                .filter(|&j| node.bounds.get(args[j]).hi >= l_max)
                .collect();
            picks.sort_by(|&i, &j| node.value(args[j]).total_cmp(&node.value(args[i])).then(i.cmp(&j)));
            picks.into_iter().map(Phase::Pick).collect()
        }
        _ => unreachable!("only piecewise-linear neurons are split"),
    }
}
