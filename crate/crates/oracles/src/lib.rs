//! Reference computations written directly from the definitions, with no
//! attention to speed. Tests compare the library against these.
//!
//! Everything here uses plain `Vec<f64>` and small local structs so that no
//! code path is shared with the implementation under test.

// index loops mirror the formulas term by term
#![allow(clippy::needless_range_loop)]

pub mod eval;
pub mod loss;
pub mod poisson;
