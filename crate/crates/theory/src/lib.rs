//! Functions on `[0,1]` and `[0,1]^2` sampled on grids, their min/max
//! summaries, and machinery that checks how little such a summary pins down.
//!
//! For each function class a pair of members with identical summaries is
//! constructed; any decoder must then be far from one of them.

mod bound;
mod class;
mod decoder;
mod grid;
mod pair;
mod sample;
mod sweep;

pub use bound::{classify_witness, verify_approx_bound, verify_classify_bound, BoundReport, BOUND_SLACK};
pub use class::{membership_check, ClassTag, Witness, MEMBERSHIP_TOL};
pub use decoder::{affine_coefficients, exact_decoder, midpoint_bound, midpoint_decoder, Decoder};
pub use grid::{minmax_summary, sup_norm, Grid, GridFunction, MinMaxSummary};
pub use pair::{construct_pair, lipschitz_steep_fits, wing_reach, CounterexamplePair};
pub use sample::random_member;
pub use sweep::{
    default_classes, demo_table, seed_rng, verify_all, verify_class, write_reports_csv, write_verdicts_csv,
    ClassVerdict, SweepConfig, EXACT_TOL,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("{0}")]
    Config(String),
    #[error("value {0} lies outside [0,1]")]
    OutOfRange(f64),
    #[error("grids differ: {0:?} vs {1:?}")]
    GridMismatch(Grid, Grid),
    #[error("impossible summary: {0}")]
    ImpossibleSummary(String),
    #[error("{0} is recovered exactly from its summary; it has no counterexample pair")]
    NoPair(ClassTag),
    #[error("no exact decoder for {0}")]
    NoExactDecoder(ClassTag),
    #[error("function is not in {tag}: {detail}")]
    NotMember { tag: ClassTag, detail: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
