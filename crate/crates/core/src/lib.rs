//! Classical and linear belief propagation for binary pairwise MRFs, applied
//! to cooperative spectrum sensing.

// Comparisons are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod bp;
pub mod experiment;
pub mod fusion;
pub mod gauss;
pub mod graph;
pub mod linear;
pub mod radio;
pub mod streams;
