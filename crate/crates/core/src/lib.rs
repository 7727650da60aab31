//! Numerical toolkit for ergodic zero-sum stochastic differential games.
//!
//! The crate discretizes controlled diffusions
//! `dX = b̄(X, u₁, u₂) dt + σ(X) dW` on truncated boxes with a monotone
//! finite-difference scheme, and computes the game value `β` and bias `φ*` of
//! the ergodic Isaacs equation
//!
//! `β = min_{v₂} max_{v₁} [L̄φ* + h̄],   φ*(0) = 0`
//!
//! by two independent routes (vanishing discount and relative value
//! iteration). It also solves the risk-sensitive ergodic control problem via
//! its logarithmic transform, and validates everything by Monte Carlo
//! simulation under the extracted saddle-point strategies.
//!
//! Start with [`registry`] for ready-made problems, then see
//! [`ergodic::vanishing_discount`], [`ergodic::solve_rvi`],
//! [`risk::solve_risk_game`] and [`sim::estimate_beta`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ergodic;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod matrix_game;
pub mod problem;
pub mod registry;
pub mod risk;
pub mod sim;

pub use error::{Error, Result};
