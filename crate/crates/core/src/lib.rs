//! Benchmark harness for learning using privileged information (LUPI).
//!
//! The crate implements the two knowledge-transfer techniques most LUPI work
//! builds on, Generalized Distillation and TRAM (transfer and marginalize),
//! alongside the data-generating processes used to test them, the ablations
//! that separate architectural effects from genuine transfer, and a
//! Monte-Carlo verifier for closed-form linear-regression risks.
//!
//! Module map:
//!
//! - [`net`]: deterministic dense networks with hand-written reverse-mode
//!   gradients, optimizers, a least-squares solver and finite-difference
//!   gradient checking.
//! - [`synthgen`]: seeded generators producing [`synthgen::TripleDataset`]s
//!   of `(x, z, y)` triples.
//! - [`lupi`]: teacher/student distillation, TRAM and a Monte-Carlo
//!   marginalization oracle.
//! - [`linear`]: ordinary and distilled least-squares estimators with their
//!   closed-form risks.
//! - [`harness`]: metrics, MNIST/CSV ingestion and the experiment sweep runner.
//! - [`repro`]: reproduction recipes with expected values and tolerances.
//!
//! Every stochastic step draws from [`rng::Rng`], so a configuration plus its
//! seeds fully determines every result bit for bit.

pub mod error;
pub mod harness;
pub mod linear;
pub mod lupi;
pub mod net;
pub mod repro;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
