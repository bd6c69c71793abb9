//! Simulation and verification toolkit for the stochastic gradient scheme
//! `X_{n+1} = X_n - h ∇F(X_n) + h σ(t_n, X_n) γ_{n+1}`
//! and its continuous-time approximations.
//!
//! The crate is organised by role:
//!
//! * [`objective`]: strongly convex objectives, the modified objective
//!   `F^h = F + (h/4)‖∇F‖²` and sampled assumption checks.
//! * [`diffusion`]: time-dependent diffusion coefficients and the rate
//!   integral `ρ(T) = ∫₀ᵀ e^{2μs} ς(s)² ds`.
//! * [`scheme`]: the discrete scheme, its Brownian-increment form, the
//!   interpolated process and the exact second-moment recursion for
//!   quadratics.
//! * [`flows`]: the gradient flow, the first- and second-order SDEs and the
//!   tangent (first-variation) processes.
//! * [`estimators`]: Monte Carlo weak/strong error estimates and order fits.
//! * [`complexity`]: the `ε → (h, N)` cost rules and regime comparison.
//!
//! Every Monte Carlo routine draws its Gaussians from a counter-keyed stream
//! ([`rng`]) and reduces in fixed path order, so results are bit-identical
//! for any rayon worker count.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod diffusion;
pub mod error;
pub mod estimators;
pub mod flows;
pub mod linalg;
pub mod objective;
pub mod quadrature;
pub mod rng;
pub mod scheme;
pub mod stats;

pub use error::{Error, Result};
