//! Dynamic-programming state-space search with pluggable heuristic guidance.
//!
//! A [`model::Model`] describes a dynamic program through state variables,
//! transitions, base cases, state constraints and dual bounds. The
//! [`search`] module solves models with anytime beam and progressive search,
//! ordering nodes through a [`guidance::Evaluator`]: dual bounds, uniform
//! cost, greedy rollouts, or networks trained by the [`learning`] module on
//! the Markov decision process derived from the same model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod domains;
pub mod guidance;
pub mod learning;
pub mod model;
pub mod search;
