//! Translation validation for a small LLVM-style SSA IR.
//!
//! A transformation pair (source function, target function) first goes to a
//! bounded-exhaustive refinement [`checker`]. Pairs the checker cannot decide
//! are handed to a [`predictor`] backend; predicted return-value or memory
//! unsoundness is then confirmed by the reason-directed [`fuzzer`]. The
//! [`pipeline`] module wires the stages together and the [`dataset`] module
//! builds fine-tuning corpora from checked pairs.

pub mod checker;
pub mod cli;
pub mod dataset;
pub mod fuzzer;
pub mod ir;
pub mod pipeline;
pub mod predictor;
pub mod semantics;
