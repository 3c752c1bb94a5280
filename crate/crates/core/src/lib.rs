//! Microscopic and homogenized reaction-diffusion through thin periodic channels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod analysis;
pub mod experiment;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod macro_solver;
pub mod micro_solver;
pub mod stepping;
