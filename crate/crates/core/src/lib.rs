// negated comparisons reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha;
pub mod cli;
pub mod constraints;
pub mod expr;
pub(crate) mod format;

pub mod controller;
pub mod funnel;
pub mod sim;
