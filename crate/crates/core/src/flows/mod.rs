//! Continuous-time references: the gradient flow, the first-order SDE, the
//! modified SDE (and its alternative-drift variants) and tangent processes.

mod aggregate;
mod ode;
pub(crate) mod sde;
mod tangent;

pub use ode::{dopri5, gradient_flow, tangent_ode, OdeSolution};
pub use sde::{simulate_sde, DriftKind, SdeOptions, SdePathSet};
pub use tangent::{tangent_sde, TangentMoments};
