//! Linear relaxations of ReLU and max constraints.
//!
//! Every encoder returns constraints of the form `expr (<=|=|>=) 0` over LP
//! variables. Relaxations need finite input bounds; when some bound is
//! infinite only the always-valid lower constraints are emitted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Interval;
use crate::lp::{Constraint, LinearExpr, Relation, VarId};

/// Width below which an input of a max constraint is treated as constant.
const DEGENERATE_WIDTH: f64 = 1e-12;
/// The `u_f` bound is skipped when `u_f - l_f` is below this.
const UF_MIN_WIDTH: f64 = 1e-9;

/// Choice of upper relaxation for max constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relaxation {
    /// Two lambda bounds plus the `u_f` bound.
    #[default]
    New,
    /// Intersection of the Planet, DeepPoly and CNN-Cert upper bounds.
    Sota,
    Planet,
    DeepPoly,
    CnnCert,
}

impl Relaxation {
    pub const ALL: [Relaxation; 5] = [
        Relaxation::New,
        Relaxation::Sota,
        Relaxation::Planet,
        Relaxation::DeepPoly,
        Relaxation::CnnCert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relaxation::New => "new",
            Relaxation::Sota => "sota",
            Relaxation::Planet => "planet",
            Relaxation::DeepPoly => "deeppoly",
            Relaxation::CnnCert => "cnncert",
        }
    }
}

impl fmt::Display for Relaxation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relaxation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relaxation::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown relaxation `{s}`"))
    }
}

/// Scalars derived from the input bounds of `b = max(a_0, .., a_{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxParams {
    /// Index of the largest upper bound (lowest index on ties).
    pub f: usize,
    /// Index of the largest upper bound among the others; `None` if k = 1.
    pub s: Option<usize>,
    pub u_f: f64,
    /// `-inf` when k = 1.
    pub u_s: f64,
    pub l_f: f64,
    pub l_max: f64,
    /// Index attaining `l_max` (lowest index on ties).
    pub m: usize,
    /// Smallest upper bound that is at least `l_max`.
    pub u_min: f64,
}

impl MaxParams {
    pub fn new(bounds: &[Interval]) -> Self {
        assert!(!bounds.is_empty(), "max over no inputs");
        let argmax = |skip: Option<usize>| {
            let mut best: Option<usize> = None;
            for (i, b) in bounds.iter().enumerate() {
                if Some(i) == skip {
                    continue;
                }
                if best.is_none_or(|j| b.hi > bounds[j].hi) {
                    best = Some(i);
                }
            }
            best
        };
        let f = argmax(None).unwrap();
        let s = argmax(Some(f));
        let mut m = 0;
        for (i, b) in bounds.iter().enumerate() {
            if b.lo > bounds[m].lo {
                m = i;
            }
        }
        let l_max = bounds[m].lo;
        let u_min = bounds
            .iter()
            .map(|b| b.hi)
            .filter(|&u| u >= l_max)
            .fold(f64::INFINITY, f64::min);
        MaxParams {
            f,
            s,
            u_f: bounds[f].hi,
            u_s: s.map_or(f64::NEG_INFINITY, |s| bounds[s].hi),
            l_f: bounds[f].lo,
            l_max,
            m,
            u_min,
        }
    }

    /// True when one input dominates all others over the box.
    pub fn is_trivial(&self) -> bool {
        self.u_s < self.l_max
    }
}

fn eq(a: VarId, b: VarId) -> Constraint {
    Constraint::new(LinearExpr::var(b).with(a, -1.0), Relation::Eq)
}

/// `b >= a`.
fn ge(b: VarId, a: VarId) -> Constraint {
    Constraint::new(LinearExpr::var(b).with(a, -1.0), Relation::Ge)
}

/// Triangle relaxation of `b = ReLU(a)` for `a` in `bounds`.
pub fn encode_relu(a: VarId, b: VarId, bounds: Interval) -> Vec<Constraint> {
    let Interval { lo: l, hi: u } = bounds;
    if l >= 0.0 {
        return vec![eq(a, b)];
    }
    if u <= 0.0 {
        return vec![Constraint::new(LinearExpr::var(b), Relation::Eq)];
    }
    let mut out = vec![
        Constraint::new(LinearExpr::var(b), Relation::Ge),
        ge(b, a),
    ];
    if l.is_finite() && u.is_finite() {
        let k = u / (u - l);
        out.push(Constraint::new(
            LinearExpr::var(b).with(a, -k).plus_constant(k * l),
            Relation::Le,
        ));
    }
    out
}

/// `b <= lambda + sum_i ReLU(u_i - lambda) / (u_i - l_i) * (a_i - l_i)`.
fn lambda_bound(args: &[(VarId, Interval)], b: VarId, lambda: f64) -> Constraint {
    let mut expr = LinearExpr::var(b).plus_constant(-lambda);
    for &(a, Interval { lo, hi }) in args {
        let r = (hi - lambda).max(0.0);
        if r == 0.0 {
            continue;
        }
        if hi - lo <= DEGENERATE_WIDTH {
            // (a - l) is at most the width here; keep the bound sound by
            // moving its largest contribution into the constant.
            expr = expr.plus_constant(-r);
            continue;
        }
        let w = r / (hi - lo);
        expr = expr.with(a, -w).plus_constant(w * lo);
    }
    Constraint::new(expr, Relation::Le)
}

fn uf_bound(args: &[(VarId, Interval)], b: VarId, p: &MaxParams) -> Option<Constraint> {
    let width = p.u_f - p.l_f;
    if width < UF_MIN_WIDTH {
        return None;
    }
    let slope = (p.u_f - p.u_s) / width;
    let offset = p.u_f * (p.u_s - p.l_f) / width;
    Some(Constraint::new(
        LinearExpr::var(b).with(args[p.f].0, -slope).plus_constant(-offset),
        Relation::Le,
    ))
}

fn planet_bound(args: &[(VarId, Interval)], b: VarId, p: &MaxParams) -> Constraint {
    let mut expr = LinearExpr::var(b).plus_constant(-p.l_max);
    for &(a, iv) in args {
        expr = expr.with(a, -1.0).plus_constant(iv.lo);
    }
    Constraint::new(expr, Relation::Le)
}

fn gamma(args: &[(VarId, Interval)], p: &MaxParams) -> f64 {
    let mut num = -1.0;
    let mut den = 0.0;
    for (_, iv) in args {
        let w = iv.width();
        if w > DEGENERATE_WIDTH {
            num += iv.hi / w;
            den += 1.0 / w;
        }
    }
    if den == 0.0 {
        return p.l_max;
    }
    (num / den).max(p.l_max).min(p.u_min)
}

/// CNN-Cert lower plane `b >= eta + sum_i w_i (a_i - eta)`, emitted only when
/// it is valid for every point of the box.
fn cnncert_lower(args: &[(VarId, Interval)], b: VarId, g: f64) -> Option<Constraint> {
    let mut weights = Vec::with_capacity(args.len());
    let mut big_g = 0.0;
    for &(a, iv) in args {
        let w = iv.width();
        if w <= DEGENERATE_WIDTH {
            return None;
        }
        big_g += (iv.hi - g) / w;
        weights.push((a, (iv.hi - g).max(0.0) / w));
    }
    let min_l = args.iter().map(|(_, iv)| iv.lo).fold(f64::INFINITY, f64::min);
    let max_u = args.iter().map(|(_, iv)| iv.hi).fold(f64::NEG_INFINITY, f64::max);
    let eta = if big_g < 1.0 {
        min_l
    } else if big_g > 1.0 {
        max_u
    } else {
        g
    };
    let sum: f64 = weights.iter().map(|&(_, w)| w).sum();
    // With S = sum of weights the plane is at most (1 - S) eta + S max(a),
    // which stays below max(a) only under these conditions.
    let sound = (sum <= 1.0 && eta <= min_l) || (sum >= 1.0 && eta >= max_u);
    if !sound {
        return None;
    }
    let mut expr = LinearExpr::var(b).plus_constant(-eta * (1.0 - sum));
    for (a, w) in weights {
        expr = expr.with(a, -w);
    }
    Some(Constraint::new(expr, Relation::Ge))
}

/// Relaxation of `b = max(args)` under the chosen encoding.
pub fn encode_max(args: &[(VarId, Interval)], b: VarId, relaxation: Relaxation) -> Vec<Constraint> {
    let bounds: Vec<Interval> = args.iter().map(|&(_, iv)| iv).collect();
    let p = MaxParams::new(&bounds);
    if p.is_trivial() {
        return vec![eq(args[p.f].0, b)];
    }
    let all_lower = || args.iter().map(|&(a, _)| ge(b, a)).collect::<Vec<_>>();
    if !bounds.iter().all(Interval::is_finite) {
        return all_lower();
    }
    let ub = || Constraint::new(LinearExpr::var(b).plus_constant(-p.u_f), Relation::Le);
    match relaxation {
        Relaxation::New => {
            let mut out = all_lower();
            out.push(lambda_bound(args, b, p.l_max));
            if p.u_min != p.l_max {
                out.push(lambda_bound(args, b, p.u_min));
            }
            out.extend(uf_bound(args, b, &p));
            out
        }
        Relaxation::Sota => {
            let mut out = all_lower();
            out.push(lambda_bound(args, b, gamma(args, &p)));
            out.push(ub());
            out.push(planet_bound(args, b, &p));
            out
        }
        Relaxation::Planet => {
            let mut out = all_lower();
            out.push(planet_bound(args, b, &p));
            out
        }
        Relaxation::DeepPoly => vec![ge(b, args[p.m].0), ub()],
        Relaxation::CnnCert => {
            let g = gamma(args, &p);
            let lower = cnncert_lower(args, b, g).unwrap_or_else(|| ge(b, args[p.m].0));
            vec![lower, lambda_bound(args, b, g)]
        }
    }
}
