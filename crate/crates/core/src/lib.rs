//! Stochastic superoptimization with a learnable proposal distribution.
//!
//! A Metropolis sampler searches over straight-line programs for a toy
//! register ISA. Its move proposal is a hierarchy of categorical draws; the
//! move-kind and opcode categoricals are produced by a model (a global bias
//! or a bag-of-opcodes MLP) trained with the score-function estimator to
//! minimize the expected relative cost reached within a fixed budget.

pub mod asm;
pub mod cost;
pub mod data;
pub mod isa;
pub mod learn;
pub mod mcmc;
pub mod proposal;
pub mod seed;

pub use cost::{CostReport, CostWeights, TestCase};
pub use isa::{Instruction, Isa, MachineState, Program};
pub use mcmc::{metropolis_run, SearchConfig, Trace};
pub use proposal::{Move, MoveKind, MoveRecord, ProposalParams};
