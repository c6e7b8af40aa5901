//! difflab: numerical analysis of one-dimensional regular diffusions.
//!
//! Given a diffusion on an interval - either Ito coefficients `(b, sigma)` or
//! scale/speed data directly - this crate classifies its boundaries
//! (regular / exit / entrance / natural), decides whether the process is
//! Feller-Dynkin and whether its stopped scale transform is a true
//! martingale, and computes hitting probabilities, expected exit times and
//! Laplace transforms of hitting times both analytically and by Monte Carlo
//! simulation.
//!
//! Module map:
//!
//! * [`expr`] - arithmetic expression parser/compiler for coefficient functions;
//! * [`quad`] - adaptive quadrature with finite-vs-divergent verdicts;
//! * [`model`] - diffusion specifications, validation and the built-in catalog;
//! * [`scale_speed`] - scale function, speed measure, natural-scale transform;
//! * [`classify`] - boundary integrals, boundary kinds, Feller-Dynkin and
//!   martingale verdicts, analysis reports;
//! * [`potential`] - hitting probabilities, Green function, exit times;
//! * [`laplace`] - eigenfunction pairs, Laplace transforms of hitting times,
//!   Picard series, boundary limit checks;
//! * [`mc`] - Euler-Maruyama Monte Carlo verification engine.

pub mod classify;
pub mod expr;
pub mod laplace;
pub mod mc;
pub mod model;
pub mod potential;
pub mod quad;
pub mod scale_speed;
