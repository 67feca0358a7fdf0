#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod measures;
pub mod replaw;
pub mod streams;
pub mod tree;
pub mod tagged;
pub mod limits;
pub mod suite;
