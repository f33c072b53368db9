//! Verification of convolutional networks by abstraction and refinement.
//!
//! The pipeline: compute per-neuron bounds ([`bounds`]), cut the neurons of
//! a convolutional layer loose to get a smaller over-approximating network
//! ([`abstraction`]), decide it with a branch-and-bound search
//! ([`verify`]), and restore neurons in the order given by a scoring policy
//! ([`policies`]) whenever a counterexample turns out to be spurious
//! ([`cegar`]).

pub mod abstraction;
pub mod batch;
pub mod bounds;
pub mod cegar;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod lp;
pub mod network;
pub mod policies;
pub mod query;
pub mod synth;
pub mod verify;

pub use abstraction::{select_abstraction_layer, Abstraction, AbstractionState};
pub use bounds::{interval_pass, lp_tighten, BoundsMap, Interval, Relaxation, Tightened};
pub use cegar::{solve_direct, solve_with_abstraction, CegarConfig, CegarReport, IterationRow};
pub use error::{Error, Result};
pub use graph::{NeuronGraph, NeuronId, NeuronOp};
pub use network::{Affine, Kernel, Layer, LayerKind, LayerOp, LayerShape, Network};
pub use policies::{Policy, PolicyContext, TestSet};
pub use query::{
    build_adversarial, OutputConstraint, SolveStatus, Status, Verdict, VerdictStats,
    VerificationQuery,
};
pub use verify::{verify, verify_with, VerifyOptions};
