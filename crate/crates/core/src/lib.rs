//! Multilinear Littlewood–Paley–Stein square functions over finitely atomic,
//! possibly non-doubling measures.
//!
//! Space integrals are exact sums over atoms; only the scale variable `t` is
//! discretised (see [`quadrature`]). On top of the operators the crate
//! provides random dyadic grids and martingale operators ([`dyadic`]),
//! Whitney and Calderón–Zygmund decompositions ([`decomp`]) and sampled
//! checks of the pointwise inequalities used by local T1 arguments
//! ([`verify`]).

pub mod decomp;
pub mod dyadic;
pub mod error;
pub mod kernel;
pub mod measure;
pub mod operator;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use measure::{AtomicMeasure, Ball, Cube, Region, SampledFunction, SignedMeasure};
pub use operator::{Evaluator, LambdaParams, Mode, Split};
pub use quadrature::{Node, QuadratureSpec};
