//! Linear programs over bounded variables.
//!
//! Problems are solved with a dense bounded-variable primal simplex (see
//! [`simplex`]). The solver switches from Dantzig pricing to Bland's rule when
//! it stalls on degenerate pivots, and gives up with [`LpError::IterationLimit`]
//! rather than return a wrong answer.

mod simplex;

use std::fmt::{self, Write as _};

use thiserror::Error;

pub use simplex::Simplex;

/// Maximum constraint or bound violation accepted at an optimal point.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Pivot / zero tolerance.
pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// `sum coeff * var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (VarId, f64)>, constant: f64) -> Self {
        let mut e = Self {
            terms: terms.into_iter().collect(),
            constant,
        };
        e.normalize();
        e
    }

    /// Adds `coeff * var`, merging with an existing term.
    pub fn add(&mut self, var: VarId, coeff: f64) -> &mut Self {
        self.terms.push((var, coeff));
        self.normalize();
        self
    }

    pub fn with(mut self, var: VarId, coeff: f64) -> Self {
        self.add(var, coeff);
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Sorts terms by variable, merges duplicates and drops zero coefficients.
    pub fn normalize(&mut self) {
        self.terms.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.terms = merged;
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn coeff(&self, var: VarId) -> f64 {
        self.terms
            .binary_search_by_key(&var, |&(v, _)| v)
            .map_or(0.0, |i| self.terms[i].1)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * point[v.0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// `expr (relation) 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub expr: LinearExpr,
    pub relation: Relation,
}

impl Constraint {
    pub fn new(expr: LinearExpr, relation: Relation) -> Self {
        Self { expr, relation }
    }

    /// Amount by which `point` violates the constraint (0 when satisfied).
    pub fn violation(&self, point: &[f64]) -> f64 {
        let v = self.expr.eval(point);
        match self.relation {
            Relation::Le => v.max(0.0),
            Relation::Ge => (-v).max(0.0),
            Relation::Eq => v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
    Feasibility,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub lower: f64,
    pub upper: f64,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: LinearExpr,
    sense: Sense,
}

impl Default for LpProblem {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn point(&self) -> Option<&[f64]> {
        match self {
            LpOutcome::Optimal { point, .. } => Some(point),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("numerical trouble: {0}")]
    Numerical(String),
    #[error("variable {0} is not declared")]
    UndeclaredVariable(VarId),
    #[error("variable {var} has empty or NaN bounds [{lower}, {upper}]")]
    BadBounds { var: VarId, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationSite {
    Bound(VarId),
    Constraint(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub site: ViolationSite,
    pub magnitude: f64,
}

impl LpProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: LinearExpr::new(),
            sense: Sense::Feasibility,
        }
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> VarId {
        self.vars.push(Variable {
            lower,
            upper,
            name: None,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        let id = self.add_var(lower, upper);
        self.vars[id.0].name = Some(name.into());
        id
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        let v = &mut self.vars[var.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn add_constraint(&mut self, expr: LinearExpr, relation: Relation) {
        self.constraints.push(Constraint::new(expr, relation));
    }

    pub fn set_objective(&mut self, objective: LinearExpr, sense: Sense) {
        self.objective = objective;
        self.sense = sense;
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> (&LinearExpr, Sense) {
        (&self.objective, self.sense)
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(LpError::BadBounds {
                    var: VarId(i),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        let n = self.vars.len();
        let exprs = self
            .constraints
            .iter()
            .map(|c| &c.expr)
            .chain(std::iter::once(&self.objective));
        for e in exprs {
            if let Some(&(v, _)) = e.terms().iter().find(|(v, _)| v.0 >= n) {
                return Err(LpError::UndeclaredVariable(v));
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpOutcome, LpError> {
        match Simplex::feasible(self)? {
            None => Ok(LpOutcome::Infeasible),
            Some(mut s) => s.optimize(&self.objective, self.sense),
        }
    }

    /// Lists every bound or constraint that `point` violates by more than
    /// [`FEASIBILITY_TOL`].
    pub fn check_point(&self, point: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, v) in self.vars.iter().enumerate() {
            let x = point[i];
            let mag = (v.lower - x).max(x - v.upper).max(0.0);
            if mag > FEASIBILITY_TOL {
                out.push(Violation {
                    site: ViolationSite::Bound(VarId(i)),
                    magnitude: mag,
                });
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let mag = c.violation(point);
            if mag > FEASIBILITY_TOL {
                out.push(Violation {
                    site: ViolationSite::Constraint(i),
                    magnitude: mag,
                });
            }
        }
        out
    }

    fn var_name(&self, v: VarId) -> String {
        self.vars[v.0]
            .name
            .clone()
            .unwrap_or_else(|| format!("v{}", v.0))
    }

    fn write_expr(&self, out: &mut String, e: &LinearExpr) {
        if e.terms().is_empty() {
            out.push('0');
        }
        for (k, &(v, c)) in e.terms().iter().enumerate() {
            let name = self.var_name(v);
            if k == 0 {
                let _ = write!(out, "{c} {name}");
            } else {
                let sign = if c < 0.0 { '-' } else { '+' };
                let _ = write!(out, " {sign} {} {name}", c.abs());
            }
        }
    }

    /// Plain-text dump in the CPLEX LP style, one constraint per line.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        out.push_str(match self.sense {
            Sense::Maximize => "Maximize\n",
            _ => "Minimize\n",
        });
        out.push_str(" obj: ");
        self.write_expr(&mut out, &self.objective);
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{i}: ");
            self.write_expr(&mut out, &c.expr);
            let _ = writeln!(out, " {} {}", c.relation.symbol(), 0.0 - c.expr.constant_term());
        }
        out.push_str("Bounds\n");
        for (i, v) in self.vars.iter().enumerate() {
            let name = self.var_name(VarId(i));
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " {name} free");
                }
                (true, false) => {
                    let _ = writeln!(out, " {name} >= {}", v.lower);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {name} <= {}", v.upper);
                }
                (true, true) => {
                    let _ = writeln!(out, " {} <= {name} <= {}", v.lower, v.upper);
                }
            }
        }
        out.push_str("End\n");
        out
    }
}
