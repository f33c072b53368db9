//! Brute-force oracles shared by the integration tests. None of them use
//! the library's LP solver, bound propagation or search.

#![allow(dead_code)]

use convabs_core::{Interval, NeuronGraph, NeuronOp, OutputConstraint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

/// Maximizes `c . x` over `{ lower <= x <= upper, a_i . x (rel_i) b_i }` by
/// enumerating every vertex. Bounds must be finite. `None` if infeasible.
pub fn vertex_max(
    c: &[f64],
    lower: &[f64],
    upper: &[f64],
    rows: &[(Vec<f64>, Rel, f64)],
) -> Option<f64> {
    let n = c.len();
    let mut planes: Vec<(Vec<f64>, f64)> = rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        planes.push((e.clone(), lower[i]));
        planes.push((e, upper[i]));
    }
    let feasible = |x: &[f64]| {
        let tol = 1e-7;
        (0..n).all(|i| x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)
            && rows.iter().all(|(a, rel, b)| {
                let v: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
                let scale = 1.0 + b.abs();
                match rel {
                    Rel::Le => v <= b + tol * scale,
                    Rel::Ge => v >= b - tol * scale,
                    Rel::Eq => (v - b).abs() <= tol * scale,
                }
            })
    };
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(n);
    fn rec(
        start: usize,
        n: usize,
        planes: &[(Vec<f64>, f64)],
        pick: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if pick.len() == n {
            visit(pick);
            return;
        }
        for i in start..planes.len() {
            if planes.len() - i < n - pick.len() {
                break;
            }
            pick.push(i);
            rec(i + 1, n, planes, pick, visit);
            pick.pop();
        }
    }
    rec(0, n, &planes, &mut pick, &mut |chosen| {
        let a: Vec<Vec<f64>> = chosen.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = chosen.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
    });
    best
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Decides whether `{ x >= 0 : A x <= b }` is non-empty with a textbook
/// dictionary simplex (auxiliary variable, Bland's rule).
pub fn tiny_feasible(a: &[Vec<f64>], b: &[f64]) -> bool {
    tiny_feasible_point(a, b).is_some()
}

/// Like [`tiny_feasible`], returning a point of the set.
pub fn tiny_feasible_point(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let n = a.first().map_or(0, Vec::len);
    if b.iter().all(|&v| v >= 0.0) {
        return Some(vec![0.0; n]);
    }
    // columns: x0 (aux), x1..xn, s1..sm, rhs
    let cols = 1 + n + m;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; cols + 1];
            row[0] = -1.0;
            row[1..=n].copy_from_slice(&a[i]);
            row[1 + n + i] = 1.0;
            row[cols] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (0..m).map(|i| 1 + n + i).collect();
    // minimize x0: objective row holds reduced costs and -value
    let mut obj = vec![0.0; cols + 1];
    obj[0] = 1.0;
    let pivot = |t: &mut Vec<Vec<f64>>, obj: &mut Vec<f64>, basis: &mut Vec<usize>, r: usize, c: usize| {
        let p = t[r][c];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let prow = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[c] != 0.0 {
                let f = row[c];
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
            }
        }
        let f = obj[c];
        for (v, pv) in obj.iter_mut().zip(&prow) {
            *v -= f * pv;
        }
        basis[r] = c;
    };
    let r0 = (0..m).min_by(|&i, &j| b[i].total_cmp(&b[j])).unwrap();
    pivot(&mut t, &mut obj, &mut basis, r0, 0);
    for _ in 0..10_000 {
        let Some(c) = (0..cols).find(|&j| obj[j] < -1e-11) else {
            break;
        };
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][c] > 1e-11 {
                let ratio = t[i][cols] / t[i][c];
                let better = match best {
                    None => true,
                    Some((bi, br)) => ratio < br - 1e-13 || (ratio <= br + 1e-13 && basis[i] < basis[bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = best else { break };
        pivot(&mut t, &mut obj, &mut basis, r, c);
    }
    let value = |var: usize| basis.iter().position(|&v| v == var).map_or(0.0, |i| t[i][cols]);
    (value(0) <= 1e-7).then(|| (1..=n).map(|j| value(j).max(0.0)).collect())
}

/// An affine function of the network inputs: `coeffs . x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aff {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl Aff {
    fn zero(n: usize) -> Self {
        Aff {
            coeffs: vec![0.0; n],
            constant: 0.0,
        }
    }

    fn axpy(&mut self, w: f64, other: &Aff) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += w * b;
        }
        self.constant += w * other.constant;
    }

    fn minus(&self, other: &Aff) -> Aff {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }
}

/// Visits every combination of linear phases of the graph's ReLU and max
/// neurons. For each one the callback receives the phase conditions
/// (each `aff <= 0`) and the outputs as affine functions of the inputs.
pub fn for_each_phase_pattern(graph: &NeuronGraph, visit: &mut dyn FnMut(&[Aff], &[Aff])) {
    let n = graph.inputs().len();
    let mut values: Vec<Option<Aff>> = vec![None; graph.capacity()];
    for (i, id) in graph.inputs().iter().enumerate() {
        let mut e = Aff::zero(n);
        e.coeffs[i] = 1.0;
        values[id.0] = Some(e);
    }
    let order: Vec<_> = graph.iter().map(|(id, _)| id).collect();
    fn rec(
        graph: &NeuronGraph,
        order: &[convabs_core::NeuronId],
        pos: usize,
        values: &mut Vec<Option<Aff>>,
        conds: &mut Vec<Aff>,
        n: usize,
        visit: &mut dyn FnMut(&[Aff], &[Aff]),
    ) {
        if pos == order.len() {
            let outs: Vec<Aff> = graph
                .outputs()
                .iter()
                .map(|o| values[o.0].clone().unwrap())
                .collect();
            visit(conds, &outs);
            return;
        }
        let id = order[pos];
        let op = &graph.neuron(id).unwrap().op;
        let val = |v: &Vec<Option<Aff>>, a: convabs_core::NeuronId| v[a.0].clone().unwrap();
        match op {
            NeuronOp::Input => rec(graph, order, pos + 1, values, conds, n, visit),
            NeuronOp::Affine { bias, terms } => {
                let mut acc = Aff::zero(n);
                acc.constant = *bias;
                for &(a, w) in terms {
                    acc.axpy(w, &val(values, a));
                }
                values[id.0] = Some(acc);
                rec(graph, order, pos + 1, values, conds, n, visit);
            }
            NeuronOp::Relu(a) => {
                let pre = val(values, *a);
                // active: -pre <= 0
                let mut neg = Aff::zero(n);
                neg.axpy(-1.0, &pre);
                conds.push(neg);
                values[id.0] = Some(pre.clone());
                rec(graph, order, pos + 1, values, conds, n, visit);
                conds.pop();
                // inactive: pre <= 0
                conds.push(pre);
                values[id.0] = Some(Aff::zero(n));
                rec(graph, order, pos + 1, values, conds, n, visit);
                conds.pop();
            }
            NeuronOp::Max(args) => {
                for (j, &aj) in args.iter().enumerate() {
                    let win = val(values, aj);
                    let before = conds.len();
                    for (i, &ai) in args.iter().enumerate() {
                        if i != j {
                            conds.push(val(values, ai).minus(&win));
                        }
                    }
                    values[id.0] = Some(win);
                    rec(graph, order, pos + 1, values, conds, n, visit);
                    conds.truncate(before);
                }
            }
        }
    }
    let mut conds = Vec::new();
    rec(graph, &order, 0, &mut values, &mut conds, n, visit);
}

/// `true` iff some input in the box satisfies all output atoms, decided by
/// one feasibility LP per phase pattern. A pattern only counts when the
/// LP's point, clipped to the box, passes the concrete check within 1e-9,
/// so properties that hold by less than the LP tolerance are not reported
/// as satisfiable.
pub fn phase_oracle_sat(graph: &NeuronGraph, input_box: &[Interval], q: &[OutputConstraint]) -> bool {
    let n = input_box.len();
    let mut sat = false;
    for_each_phase_pattern(graph, &mut |conds, outs| {
        if sat {
            return;
        }
        let mut all: Vec<Aff> = conds.to_vec();
        for atom in q {
            let mut g = Aff::zero(n);
            g.constant = atom.constant;
            for &(k, c) in &atom.terms {
                g.axpy(c, &outs[k]);
            }
            all.push(g);
        }
        // shift x = l + x', x' >= 0, plus x' <= u - l
        let mut a = Vec::new();
        let mut b = Vec::new();
        for g in &all {
            let shift: f64 = g.coeffs.iter().zip(input_box).map(|(c, iv)| c * iv.lo).sum();
            a.push(g.coeffs.clone());
            b.push(-g.constant - shift);
        }
        for (i, iv) in input_box.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            a.push(e);
            b.push(iv.hi - iv.lo);
        }
        if let Some(xs) = tiny_feasible_point(&a, &b) {
            let x: Vec<f64> = xs
                .iter()
                .zip(input_box)
                .map(|(v, iv)| (iv.lo + v).clamp(iv.lo, iv.hi))
                .collect();
            let y = graph.evaluate_outputs(&x).unwrap();
            sat = q.iter().all(|atom| atom.eval(&y) <= 1e-9);
        }
    });
    sat
}

/// Exact maximum of output `k` over the box, by vertex enumeration inside
/// each phase pattern. Only practical for a handful of inputs.
pub fn phase_oracle_max(graph: &NeuronGraph, input_box: &[Interval], k: usize) -> f64 {
    let lower: Vec<f64> = input_box.iter().map(|b| b.lo).collect();
    let upper: Vec<f64> = input_box.iter().map(|b| b.hi).collect();
    let mut best = f64::NEG_INFINITY;
    for_each_phase_pattern(graph, &mut |conds, outs| {
        let rows: Vec<(Vec<f64>, Rel, f64)> = conds
            .iter()
            .map(|g| (g.coeffs.clone(), Rel::Le, -g.constant))
            .collect();
        if let Some(v) = vertex_max(&outs[k].coeffs, &lower, &upper, &rows) {
            best = best.max(v + outs[k].constant);
        }
    });
    best
}

/// Input bounds for a random `max` over 2 to 4 arguments, plus a random
/// objective over `(a_0, .., a_{k-1}, b)` that rewards large `b`.
pub fn random_max_instance<R: rand::Rng>(rng: &mut R) -> (Vec<Interval>, Vec<f64>) {
    let k = rng.gen_range(2..=4);
    let bounds: Vec<Interval> = (0..k)
        .map(|_| {
            let lo = rng.gen_range(-3.0..2.0);
            Interval::new(lo, lo + rng.gen_range(0.1..4.0))
        })
        .collect();
    let mut obj: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    obj.push(rng.gen_range(0.05..1.0));
    (bounds, obj)
}

/// LP maximum of `obj` over the relaxation of `b = max(a)` (library LP).
pub fn max_relaxation_optimum(bounds: &[Interval], obj: &[f64], relaxation: convabs_core::Relaxation) -> f64 {
    use convabs_core::lp::{LinearExpr, LpProblem, Sense};
    let mut p = LpProblem::new();
    let args: Vec<_> = bounds.iter().map(|b| (p.add_var(b.lo, b.hi), *b)).collect();
    let b = p.add_var(f64::NEG_INFINITY, f64::INFINITY);
    for c in convabs_core::bounds::encode_max(&args, b, relaxation) {
        p.add_constraint(c.expr, c.relation);
    }
    let vars = args.iter().map(|a| a.0).chain([b]);
    p.set_objective(LinearExpr::from_terms(vars.zip(obj.iter().copied()), 0.0), Sense::Maximize);
    p.solve().unwrap().value().expect("relaxation is bounded and feasible")
}

/// Largest `obj . (a, max(a))` over `samples` uniform points of the box.
pub fn sampled_max_objective<R: rand::Rng>(rng: &mut R, bounds: &[Interval], obj: &[f64], samples: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let a: Vec<f64> = bounds.iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect();
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let v: f64 = a.iter().chain([&m]).zip(obj).map(|(x, c)| x * c).sum();
        best = best.max(v);
    }
    best
}

/// Hidden neurons that cannot reach an output once `promoted` become
/// inputs, found by a backward search from the outputs.
pub fn expected_pruned(graph: &NeuronGraph, promoted: &[convabs_core::NeuronId]) -> Vec<convabs_core::NeuronId> {
    let mut reached = vec![false; graph.capacity()];
    let mut stack: Vec<_> = graph.outputs().to_vec();
    while let Some(id) = stack.pop() {
        if std::mem::replace(&mut reached[id.0], true) {
            continue;
        }
        if promoted.contains(&id) {
            continue;
        }
        stack.extend(graph.neuron(id).unwrap().op.operands());
    }
    graph
        .iter()
        .filter(|(id, n)| !reached[id.0] && !matches!(n.op, NeuronOp::Input) && !promoted.contains(id))
        .map(|(id, _)| id)
        .collect()
}

/// Runs `samples` containment checks of an abstraction: for a concrete
/// input, the original values of the promoted neurons must form an abstract
/// input inside the abstract box, and the abstract network must reproduce
/// the original outputs from it. Returns the number of failed checks.
pub fn containment_violations<R: rand::Rng>(
    rng: &mut R,
    query: &convabs_core::VerificationQuery,
    abstraction: &convabs_core::Abstraction,
    samples: usize,
) -> usize {
    let abs_query = abstraction.query(query).unwrap();
    let mut bad = 0;
    for _ in 0..samples {
        let x: Vec<f64> = query.input_box().iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect();
        let values = query.graph().evaluate(&x).unwrap();
        let y = query.graph().evaluate_outputs(&x).unwrap();
        let mut z = x.clone();
        z.extend(abstraction.promoted().iter().map(|id| values[id.0]));
        let inside = abs_query
            .input_box()
            .iter()
            .zip(&z)
            .all(|(b, v)| b.contains(*v, 1e-9 * (1.0 + v.abs())));
        let same = abstraction
            .graph()
            .evaluate_outputs(&z)
            .map(|ya| ya.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs())))
            .unwrap_or(false);
        let sat_preserved = !query.outputs_satisfy(&y) || abs_query.outputs_satisfy(&y);
        if !(inside && same && sat_preserved && abstraction.lift_cex(&z) == x) {
            bad += 1;
        }
    }
    bad
}

/// A random abstraction of a random query: a random non-empty subset of
/// hidden neurons, using interval bounds.
pub fn random_abstraction<R: rand::Rng>(
    rng: &mut R,
) -> (convabs_core::VerificationQuery, convabs_core::BoundsMap, convabs_core::Abstraction) {
    let (_, q) = convabs_core::synth::random_query(rng, 8).unwrap();
    let bounds = convabs_core::interval_pass(q.graph(), q.input_box()).unwrap();
    let hidden: Vec<_> = q
        .graph()
        .iter()
        .filter(|(id, n)| !matches!(n.op, NeuronOp::Input) && !q.graph().outputs().contains(id))
        .map(|(id, _)| id)
        .collect();
    let v: Vec<_> = hidden.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
    let v = if v.is_empty() { vec![hidden[rng.gen_range(0..hidden.len())]] } else { v };
    let abs = convabs_core::Abstraction::build(&q.shared_graph(), &bounds, &v).unwrap();
    (q, bounds, abs)
}
