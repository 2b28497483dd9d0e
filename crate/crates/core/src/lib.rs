//! Singular approximations of hyperbolic systems of conservation laws.
//!
//! Two approximation schemes are implemented for systems whose speeds lie
//! in `(0, 1)`:
//!
//! * [`backward`]: the implicit backward semigroup step
//!   `u_n - u_{n-1} + A(u_n) u_{n,x} = 0`, marched as an ODE in `x`;
//! * [`semidiscrete`]: the upwind lattice `du_n/dt + f(u_n) - f(u_{n-1}) = 0`.
//!
//! Around them sit the linear kernels and interaction integrals
//! ([`kernels`]), wave decompositions and Glimm-type functionals
//! ([`functionals`]), reference solutions and epsilon studies
//! ([`harness`]), and configuration and CSV I/O ([`config`], [`io`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward;
pub mod config;
pub mod error;
pub mod functionals;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod quadrature;
pub mod semidiscrete;
pub mod special;
pub mod system;

pub use backward::{backward_step, run_backward, BackwardOptions, BackwardRunState, GridFunction};
pub use error::{ConfigIssue, Error, Result};
pub use functionals::{
    Basis, FunctionalReport, FunctionalSample, FunctionalSeries, WaveComponents,
};

pub use kernels::KernelParams;
pub use semidiscrete::{integrate, IntegrateOptions, LatticeState};

pub use system::{SpectralData, StateBox, SystemKind, SystemSpec};
