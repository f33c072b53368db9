//! The abstraction-refinement loop.
//!
//! Bounds are computed once on the original query. The chosen layer is then
//! abstracted entirely and the abstract query is verified. An unsatisfiable
//! abstract query settles the original one; a counterexample is projected
//! back and checked on the original network, and if it is spurious the
//! most important abstract neurons are restored and the loop repeats.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::abstraction::{select_abstraction_layer, AbstractionState};
use crate::bounds::{interval_pass, lp_tighten, BoundsMap, Relaxation, Tightened};
use crate::error::{Error, Result};
use crate::policies::{refinement_priority, score_layer, Policy, PolicyContext};
use crate::query::{SolveStatus, Status, Verdict, VerdictStats, VerificationQuery};
use crate::verify::{verify_with, VerifyOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CegarConfig {
    pub relaxation: Relaxation,
    /// LP-tighten the interval bounds before abstracting.
    pub lp_tighten: bool,
    /// Neurons restored per refinement.
    pub step: usize,
    /// Double the step after every refinement.
    pub geometric_step: bool,
    pub timeout: Duration,
    /// Budget of a single abstract query; on expiry the loop jumps to the
    /// original network.
    pub sub_timeout: Duration,
    /// Layer to abstract instead of the automatically selected one.
    pub abstraction_layer: Option<usize>,
    /// LP-tighten bounds of every abstract query before searching it.
    pub tighten_abstract: bool,
}

impl Default for CegarConfig {
    fn default() -> Self {
        CegarConfig {
            relaxation: Relaxation::New,
            lp_tighten: true,
            step: 1,
            geometric_step: false,
            timeout: Duration::from_secs(3600),
            sub_timeout: Duration::from_secs(800),
            abstraction_layer: None,
            tighten_abstract: false,
        }
    }
}

/// One verifier call of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    /// Number of abstract neurons.
    pub abstract_neurons: usize,
    pub pruned: usize,
    pub size_ratio: f64,
    pub verdict: Status,
    /// The abstract counterexample failed on the original network.
    pub spurious: bool,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CegarReport {
    pub verdict: Verdict,
    pub iterations: Vec<IterationRow>,
    pub abstraction_layer: Option<usize>,
    pub bounds_secs: f64,
}

/// Bounds of the original query: interval pass, then LP tightening when
/// enabled. `None` when tightening proves the query unsatisfiable.
pub fn initial_bounds(query: &VerificationQuery, config: &CegarConfig) -> Result<Option<BoundsMap>> {
    let bounds = interval_pass(query.graph(), query.input_box())?;
    if !config.lp_tighten {
        return Ok(Some(bounds));
    }
    Ok(match lp_tighten(query, &bounds, config.relaxation)? {
        Tightened::Bounds(b) => Some(b),
        Tightened::Infeasible => None,
    })
}

fn seal(mut verdict: Verdict, status: Option<SolveStatus>, stats: VerdictStats, start: Instant) -> Verdict {
    verdict.solve_status = status.filter(|_| verdict.status != Status::Timeout);
    verdict.stats = VerdictStats {
        runtime_secs: start.elapsed().as_secs_f64(),
        ..stats
    };
    verdict
}

fn proved_by_bounds(start: Instant) -> CegarReport {
    let bounds_secs = start.elapsed().as_secs_f64();
    CegarReport {
        verdict: seal(Verdict::unsat(), Some(SolveStatus::LpInfeasible), VerdictStats::default(), start),
        iterations: Vec::new(),
        abstraction_layer: None,
        bounds_secs,
    }
}

/// Verifies `query` on the original network only, with the same bound
/// preprocessing as [`solve_with_abstraction`].
pub fn solve_direct(query: &VerificationQuery, config: &CegarConfig) -> Result<CegarReport> {
    let start = Instant::now();
    let deadline = start + config.timeout;
    let Some(bounds) = initial_bounds(query, config)? else {
        return Ok(proved_by_bounds(start));
    };
    let bounds_secs = start.elapsed().as_secs_f64();
    let t = Instant::now();
    let v = verify_with(
        query,
        &VerifyOptions {
            relaxation: config.relaxation,
            deadline: Some(deadline),
            tighten_root: false,
            hint: Some(bounds),
        },
    )?;
    let row = IterationRow {
        iteration: 0,
        abstract_neurons: 0,
        pruned: 0,
        size_ratio: 1.0,
        verdict: v.status,
        spurious: false,
        secs: t.elapsed().as_secs_f64(),
    };
    let stats = VerdictStats {
        size_ratio: 1.0,
        ..v.stats.clone()
    };
    Ok(CegarReport {
        verdict: seal(v, Some(SolveStatus::FullNetwork), stats, start),
        iterations: vec![row],
        abstraction_layer: None,
        bounds_secs,
    })
}

/// Runs the abstraction-refinement loop. `ctx` feeds the refinement
/// policy; when it lacks a reference point the center of the input box is
/// used.
pub fn solve_with_abstraction(
    query: &VerificationQuery,
    policy: Policy,
    ctx: &PolicyContext<'_>,
    config: &CegarConfig,
) -> Result<CegarReport> {
    let start = Instant::now();
    let deadline = start + config.timeout;
    let Some(bounds) = initial_bounds(query, config)? else {
        info!("bound tightening proved the query unsatisfiable");
        return Ok(proved_by_bounds(start));
    };
    let bounds_secs = start.elapsed().as_secs_f64();

    let graph = query.shared_graph();
    let layer = match config.abstraction_layer {
        Some(l) => l,
        None => match select_abstraction_layer(&graph) {
            Ok(l) => l,
            Err(Error::NoConvolutionalPrefix) => {
                debug!("no convolutional prefix, verifying the original network");
                let mut report = solve_direct(query, config)?;
                report.bounds_secs = bounds_secs;
                return Ok(report);
            }
            Err(e) => return Err(e),
        },
    };

    let center: Vec<f64> = query.input_box().iter().map(|b| b.midpoint()).collect();
    let ctx = PolicyContext {
        x0: Some(ctx.x0.unwrap_or(&center)),
        ..*ctx
    };
    let scores = score_layer(policy, &graph, layer, &ctx)?;
    let priority = refinement_priority(&graph, layer, &scores);
    let mut state = AbstractionState::for_layer(Arc::clone(&graph), bounds.clone(), layer, priority)?;

    let mut rows = Vec::new();
    let mut stats = VerdictStats::default();
    let mut step = config.step.max(1);
    loop {
        let full = state.is_full_network();
        let iter_start = Instant::now();
        let sub_deadline = if full {
            deadline
        } else {
            deadline.min(iter_start + config.sub_timeout)
        };
        let aq = state.abstraction().query(query)?;
        let v = verify_with(
            &aq,
            &VerifyOptions {
                relaxation: config.relaxation,
                deadline: Some(sub_deadline),
                tighten_root: config.tighten_abstract && !full,
                hint: Some(bounds.clone()),
            },
        )?;
        stats.nodes += v.stats.nodes;
        stats.tolerance_limited |= v.stats.tolerance_limited;
        stats.size_ratio = state.size_ratio();
        let mut row = IterationRow {
            iteration: rows.len(),
            abstract_neurons: state.abstract_set().len(),
            pruned: state.pruned().len(),
            size_ratio: state.size_ratio(),
            verdict: v.status,
            spurious: false,
            secs: 0.0,
        };
        let solved_at = if full {
            SolveStatus::FullNetwork
        } else if stats.refinements == 0 {
            SolveStatus::AllAbstract
        } else {
            SolveStatus::PartialRefinement
        };
        debug!(
            iteration = row.iteration,
            abstract_neurons = row.abstract_neurons,
            verdict = ?v.status,
            "verified abstraction"
        );
        match v.status {
            Status::Unsat => {
                row.secs = iter_start.elapsed().as_secs_f64();
                rows.push(row);
                return Ok(CegarReport {
                    verdict: seal(Verdict::unsat(), Some(solved_at), stats, start),
                    iterations: rows,
                    abstraction_layer: Some(layer),
                    bounds_secs,
                });
            }
            Status::Sat => {
                let cex = state.lift_cex(v.counterexample.as_deref().unwrap_or_default());
                if query.check_concrete(&cex) {
                    row.secs = iter_start.elapsed().as_secs_f64();
                    rows.push(row);
                    return Ok(CegarReport {
                        verdict: seal(Verdict::sat(cex), Some(solved_at), stats, start),
                        iterations: rows,
                        abstraction_layer: Some(layer),
                        bounds_secs,
                    });
                }
                if full {
                    // A counterexample of the original network that fails
                    // its own concrete check cannot occur.
                    return Err(Error::Structure(
                        "verifier returned an invalid counterexample".into(),
                    ));
                }
                row.spurious = true;
                row.secs = iter_start.elapsed().as_secs_f64();
                rows.push(row);
                state = state.refine(step)?;
                stats.refinements += 1;
                if config.geometric_step {
                    step = step.saturating_mul(2);
                }
            }
            Status::Timeout => {
                row.secs = iter_start.elapsed().as_secs_f64();
                rows.push(row);
                if full || Instant::now() >= deadline {
                    return Ok(CegarReport {
                        verdict: seal(Verdict::timeout(), None, stats, start),
                        iterations: rows,
                        abstraction_layer: Some(layer),
                        bounds_secs,
                    });
                }
                debug!("abstract query timed out, moving to the original network");
                let remaining = state.abstract_set().len();
                state = state.refine(remaining)?;
                stats.refinements += 1;
            }
        }
    }
}
