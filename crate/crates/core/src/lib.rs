//! Numerical toolkit for exponential dichotomies and invariant manifolds of
//! semilinear evolution equations at desk scale.
//!
//! The pipeline is: certify a spectral gap ([`certify`]), solve two-point
//! dichotomous boundary problems ([`solver`]), check the resulting
//! correspondences against invariant-cone conditions ([`correspond`]),
//! iterate graph transforms to invariant manifolds ([`graph`]) and run
//! persistence machinery for normally hyperbolic circles ([`nhim`]).
//! Concrete finite-dimensional instances live in the [`problems`] catalog.

pub mod certify;
pub mod correspond;
pub mod graph;
pub mod jsonmat;
pub mod nhim;
pub mod problems;
pub mod solver;
pub mod splitting;

pub use nalgebra::{DMatrix, DVector};
