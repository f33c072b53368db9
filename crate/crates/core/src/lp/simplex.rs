//! Dense bounded-variable primal simplex.
//!
//! Every constraint row `a.x (rel) -c` gets a row variable `r = a.x` whose
//! bounds encode the relation, so the working system is the homogeneous
//! `A x - r = 0` with all variables boxed (possibly by infinities). Rows whose
//! row variable cannot start inside its bounds get an artificial column, and
//! phase one drives the artificials to zero. Because the system is
//! homogeneous, basic values can always be recomputed from the nonbasic ones,
//! which keeps drift in check.

use super::{LinearExpr, LpError, LpOutcome, LpProblem, Relation, Sense, FEASIBILITY_TOL, PIVOT_TOL};

const OPT_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const DEGENERATE_STREAK: usize = 50;
const REFRESH_EVERY: usize = 40;

/// A simplex tableau holding a primal-feasible basis. Cloning it is the way
/// to run several objectives from the same starting point.
#[derive(Debug, Clone)]
pub struct Simplex {
    rows: usize,
    n_struct: usize,
    cols: usize,
    tab: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    first_art: usize,
    since_refresh: usize,
    /// Original sparse rows, used for the final feasibility audit.
    orig: Vec<Vec<(usize, f64)>>,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Simplex {
    /// Runs phase one. Returns `None` if the problem is infeasible.
    pub fn feasible(problem: &LpProblem) -> Result<Option<Self>, LpError> {
        problem.validate()?;
        let n = problem.vars().len();
        let m = problem.constraints().len();

        let mut x0: Vec<f64> = problem
            .vars()
            .iter()
            .map(|v| {
                if v.lower.is_finite() {
                    v.lower
                } else if v.upper.is_finite() {
                    v.upper
                } else {
                    0.0
                }
            })
            .collect();

        let mut orig = Vec::with_capacity(m);
        let mut row_bounds = Vec::with_capacity(m);
        let mut acts = Vec::with_capacity(m);
        let mut n_art = 0;
        for c in problem.constraints() {
            let terms: Vec<(usize, f64)> = c.expr.terms().iter().map(|&(v, a)| (v.0, a)).collect();
            let rhs = -c.expr.constant_term();
            let (lo, hi) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, rhs),
                Relation::Ge => (rhs, f64::INFINITY),
                Relation::Eq => (rhs, rhs),
            };
            let act: f64 = terms.iter().map(|&(j, a)| a * x0[j]).sum();
            if act < lo || act > hi {
                n_art += 1;
            }
            orig.push(terms);
            row_bounds.push((lo, hi));
            acts.push(act);
        }

        let cols = n + m + n_art;
        let mut s = Simplex {
            rows: m,
            n_struct: n,
            cols,
            tab: vec![0.0; m * cols],
            lower: vec![0.0; cols],
            upper: vec![0.0; cols],
            x: vec![0.0; cols],
            basis: vec![0; m],
            row_of: vec![None; cols],
            first_art: n + m,
            since_refresh: 0,
            orig,
        };
        for (j, v) in problem.vars().iter().enumerate() {
            s.lower[j] = v.lower;
            s.upper[j] = v.upper;
        }
        s.x[..n].copy_from_slice(&x0);
        x0.clear();

        let mut art = n + m;
        for i in 0..m {
            let (lo, hi) = row_bounds[i];
            let r = n + i;
            s.lower[r] = lo;
            s.upper[r] = hi;
            let act = acts[i];
            let base = i * cols;
            if act >= lo && act <= hi {
                for &(j, a) in &s.orig[i] {
                    s.tab[base + j] = -a;
                }
                s.tab[base + r] = 1.0;
                s.x[r] = act;
                s.basis[i] = r;
                s.row_of[r] = Some(i);
            } else {
                let beta = act.clamp(lo, hi);
                let sign = if beta > act { 1.0 } else { -1.0 };
                for &(j, a) in &s.orig[i] {
                    s.tab[base + j] = a / sign;
                }
                s.tab[base + r] = -1.0 / sign;
                s.tab[base + art] = 1.0;
                s.x[r] = beta;
                s.lower[art] = 0.0;
                s.upper[art] = f64::INFINITY;
                s.x[art] = (beta - act).abs();
                s.basis[i] = art;
                s.row_of[art] = Some(i);
                art += 1;
            }
        }

        if n_art > 0 {
            let mut cost = vec![0.0; cols];
            cost[s.first_art..].iter_mut().for_each(|c| *c = 1.0);
            match s.run(&cost)? {
                Step::Optimal => {}
                Step::Unbounded => {
                    return Err(LpError::Numerical("phase one reported unbounded".into()))
                }
            }
            s.refresh();
            let infeas: f64 = s.x[s.first_art..].iter().sum();
            if infeas > FEASIBILITY_TOL {
                return Ok(None);
            }
            for j in s.first_art..cols {
                s.upper[j] = 0.0;
                if s.row_of[j].is_none() {
                    s.x[j] = 0.0;
                }
            }
            s.drive_out_artificials();
        }
        Ok(Some(s))
    }

    /// Optimizes `objective` from the current feasible basis.
    pub fn optimize(&mut self, objective: &LinearExpr, sense: Sense) -> Result<LpOutcome, LpError> {
        let mut cost = vec![0.0; self.cols];
        let sign = match sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
            Sense::Feasibility => 0.0,
        };
        for &(v, c) in objective.terms() {
            if v.0 >= self.n_struct {
                return Err(LpError::UndeclaredVariable(v));
            }
            cost[v.0] = sign * c;
        }
        if let Step::Unbounded = self.run(&cost)? {
            return Ok(LpOutcome::Unbounded);
        }
        self.refresh();
        let point: Vec<f64> = (0..self.n_struct)
            .map(|j| self.x[j].clamp(self.lower[j], self.upper[j]))
            .collect();
        self.audit(&point)?;
        Ok(LpOutcome::Optimal {
            value: objective.eval(&point),
            point,
        })
    }

    /// Structural values of the current basis.
    pub fn point(&self) -> Vec<f64> {
        self.x[..self.n_struct].to_vec()
    }

    fn audit(&self, point: &[f64]) -> Result<(), LpError> {
        for (i, row) in self.orig.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * point[j]).sum();
            let r = self.n_struct + i;
            let scale = 1.0 + row.iter().map(|&(j, a)| (a * point[j]).abs()).sum::<f64>();
            let viol = (self.lower[r] - act).max(act - self.upper[r]);
            if viol > FEASIBILITY_TOL * scale * 10.0 {
                return Err(LpError::Numerical(format!(
                    "row {i} violated by {viol:e} at the reported optimum"
                )));
            }
        }
        Ok(())
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.tab[i * self.cols + j]
    }

    /// Recomputes basic values from the nonbasic ones.
    fn refresh(&mut self) {
        for i in 0..self.rows {
            let row = &self.tab[i * self.cols..(i + 1) * self.cols];
            let mut v = 0.0;
            for (j, &t) in row.iter().enumerate() {
                if t != 0.0 && self.row_of[j].is_none() {
                    v -= t * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
        self.since_refresh = 0;
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let p = self.tab[r * cols + q];
        for j in 0..cols {
            self.tab[r * cols + j] /= p;
        }
        self.tab[r * cols + q] = 1.0;
        let pivot_row: Vec<f64> = self.tab[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.tab[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * cols..(i + 1) * cols];
            for (t, &pr) in row.iter_mut().zip(&pivot_row) {
                if pr != 0.0 {
                    *t -= f * pr;
                }
            }
            row[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = None;
        self.row_of[q] = Some(r);
        self.basis[r] = q;
        self.since_refresh += 1;
    }

    fn drive_out_artificials(&mut self) {
        for r in 0..self.rows {
            let b = self.basis[r];
            if b < self.first_art {
                continue;
            }
            let best = (0..self.first_art)
                .filter(|&j| self.row_of[j].is_none())
                .map(|j| (j, self.at(r, j).abs()))
                .filter(|&(_, a)| a > 1e-7)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((q, _)) = best {
                self.pivot(r, q);
                self.x[b] = 0.0;
            }
        }
        self.refresh();
    }

    fn run(&mut self, cost: &[f64]) -> Result<Step, LpError> {
        let limit = 50 * (self.rows + self.cols) + 1000;
        let mut bland = false;
        let mut degenerate = 0usize;
        let mut reduced = vec![0.0; self.cols];
        for _ in 0..limit {
            if self.since_refresh >= REFRESH_EVERY {
                self.refresh();
            }

            reduced.copy_from_slice(cost);
            for i in 0..self.rows {
                let cb = cost[self.basis[i]];
                if cb == 0.0 {
                    continue;
                }
                let row = &self.tab[i * self.cols..(i + 1) * self.cols];
                for (d, &t) in reduced.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }

            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.cols {
                if self.row_of[j].is_some() || self.lower[j] >= self.upper[j] {
                    continue;
                }
                let d = reduced[j];
                let dir = if d < -OPT_TOL && self.x[j] < self.upper[j] {
                    1.0
                } else if d > OPT_TOL && self.x[j] > self.lower[j] {
                    -1.0
                } else {
                    continue;
                };
                let score = d.abs();
                if bland {
                    entering = Some((j, dir, score));
                    break;
                }
                if entering.is_none_or(|(_, _, s)| score > s) {
                    entering = Some((j, dir, score));
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(Step::Optimal);
            };

            let mut theta = f64::INFINITY;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let rate = -dir * self.at(i, q);
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let lim = if rate < 0.0 {
                    if !self.lower[b].is_finite() {
                        continue;
                    }
                    (self.x[b] - self.lower[b]) / -rate
                } else {
                    if !self.upper[b].is_finite() {
                        continue;
                    }
                    (self.upper[b] - self.x[b]) / rate
                }
                .max(0.0);
                let better = match leave {
                    None => true,
                    Some((li, lrate)) => {
                        if lim < theta - TIE_TOL {
                            true
                        } else if lim <= theta + TIE_TOL {
                            if bland {
                                b < self.basis[li]
                            } else {
                                rate.abs() > lrate.abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = lim;
                    leave = Some((i, rate));
                }
            }

            let span = self.upper[q] - self.lower[q];
            let flip = span.is_finite() && span <= theta;
            if flip {
                theta = span;
            }
            if theta.is_infinite() {
                return Ok(Step::Unbounded);
            }

            for i in 0..self.rows {
                let rate = -dir * self.at(i, q);
                if rate != 0.0 {
                    let b = self.basis[i];
                    self.x[b] += rate * theta;
                }
            }
            if flip {
                self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
            } else {
                self.x[q] += dir * theta;
                let (r, rate) = leave.expect("finite step has a leaving row");
                let b = self.basis[r];
                self.x[b] = if rate < 0.0 { self.lower[b] } else { self.upper[b] };
                self.pivot(r, q);
            }

            if theta <= TIE_TOL {
                degenerate += 1;
                if degenerate > DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
        }
        Err(LpError::IterationLimit(limit))
    }
}
