//! De-sparsified Dantzig-selector inference for high-dimensional clustered
//! (longitudinal) regression.
//!
//! The pipeline for a single coordinate `j` is:
//!
//! 1. an initial sparse fit from an ℓ1-minimal program with an ∞-norm bound on
//!    the unweighted estimating equation ([`selector::dantzig_linear`],
//!    [`selector::dantzig_glm`]);
//! 2. a working covariance estimated from the residuals of that fit
//!    ([`gee::estimate_working_cov`]);
//! 3. a sparse projection direction, one column of a constrained ℓ1 inverse of
//!    the weighted Gram matrix ([`selector::clime_column`]);
//! 4. the de-sparsified estimate, the root of the projected estimating equation
//!    in coordinate `j`, with its sandwich variance and a normal-theory interval
//!    ([`inference`]).
//!
//! Everything rests on a small dense linear-algebra layer ([`numerics`]) and a
//! deterministic revised simplex solver ([`lp`]).

pub mod data;
pub mod error;
pub mod gee;
pub mod inference;
pub mod lp;
pub mod numerics;
pub mod pipeline;
pub mod selector;
pub mod simulate;
pub mod tuning;

pub use data::ClusteredDataset;
pub use error::{Error, Result};
pub use gee::{CorrelationKind, LinkFunction, WorkingCovariance};
pub use inference::{CoordinateInference, FitConfig, SplitMode};
pub use numerics::{Matrix, SpdMatrix};
pub use pipeline::{fit, CoordinateOutcome, FitOutcome};
pub use selector::{ClimeColumn, GramMatrix, SelectorFit};
pub use simulate::{McReport, SimDesign};
pub use tuning::TuneResult;
