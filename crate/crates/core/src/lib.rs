//! Maximum-likelihood estimation of a log-concave sub-density with a cure
//! mass at `+∞` from exact, interval-censored, right-censored or binned data.
//!
//! The estimator is computed by an EM algorithm whose M-step maximizes a
//! concave objective over piecewise-linear concave log-densities on a knot
//! grid ([`solver`]). Unconstrained baselines (Turnbull, Kaplan–Meier) live
//! in [`comparators`], and [`sim`] reproduces the interval-censoring
//! simulation studies.

pub mod comparators;
pub mod data;
pub mod em;
pub mod plc;
pub mod sim;
pub mod solver;

#[cfg(test)]
#[path = "../tests/common/quadrature.rs"]
pub(crate) mod quadrature;
