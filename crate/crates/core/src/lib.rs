//! Poisson and Nambu bracket machinery for three-dimensional flows.
//!
//! The crate verifies bi-Hamiltonian structures `ẋ = J₁×∇H₂ = J₂×∇H₁` of
//! transformed Lü, modified Lü, T, Chen, Chen-variant and Qi systems:
//!
//! * [`expr`]: expression trees with parser, exact differentiation,
//!   simplification and evaluation;
//! * [`vecfield`]: gradient, curl, divergence and products in a fixed frame;
//! * [`poisson`]: Poisson and Nambu brackets, Jacobi, Casimir,
//!   compatibility and last-multiplier residuals;
//! * [`catalog`]: the built-in systems and the system-file format;
//! * [`integrate`]: RK4 and Dormand–Prince integration with invariant
//!   monitors;
//! * [`verify`]: residual sampling and report assembly;
//! * [`discover`]: first integrals and multipliers from an ansatz basis.

pub mod catalog;
pub mod discover;
pub mod expr;
pub mod integrate;
pub mod poisson;
pub mod residual;
pub mod sampling;
pub mod vecfield;
pub mod verify;

pub use expr::{parse, Bindings, Expr};
pub use sampling::{Domain, DEFAULT_SEED};
pub use vecfield::{Frame, ScalarField, VectorField3};
