//! Numerical computation and certification of Whitney (a)- and
//! (b)-regular stratifications of real semialgebraic sets.
//!
//! The crate is organized bottom-up: [`polycore`] holds exact polynomial
//! arithmetic, [`semivariety`] samples and filters sets, [`grassmann`] and
//! [`kuo`] measure tangent-plane defects, [`whitney`] turns them into
//! verdicts, [`refine`] builds and certifies stratifications, and [`cli`]
//! wires it all to files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod exec;
pub mod grassmann;
pub mod kuo;
pub mod linalg;
pub mod params;
pub mod polycore;
pub mod refine;
pub mod rng;
pub mod semivariety;
pub mod whitney;

pub use params::Params;
pub use polycore::{parse_poly, Polynomial, Rational};
