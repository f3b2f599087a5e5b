//! Invariance proximity of finite-dimensional function subspaces under the
//! Koopman operator of a discrete-time system `x⁺ = T(x)`.
//!
//! The worst-case relative projection error of `S` equals the sine of the
//! largest principal angle between `S` and `KS`. Both subspaces are carried
//! into a standard coordinate space through an inner-product preserving
//! isomorphism of `W = S + KS`, where the angle is computed with an SVD.
//!
//! Modules, bottom-up:
//! - [`expr`]: the expression language for dynamics maps and dictionary atoms.
//! - [`space`]: quadrature and empirical inner products, Gram assembly.
//! - [`geometry`]: orthonormalization, isomorphisms, principal angles.
//! - [`koopman`]: projected models, the proximity pipeline, witnesses, oracles.
//! - [`config`] and [`experiments`]: the run configuration and CLI drivers.

pub mod config;
pub mod experiments;
pub mod expr;
pub mod geometry;
pub mod koopman;
pub mod space;

pub use expr::{compose_with_map, DynamicsMap, Expr, ExprError, Observable};
pub use geometry::{
    orthonormalize, principal_angles, principal_angles_bruteforce, GeometryError, Isomorphism,
    PrincipalDecomposition, SubspaceBasis,
};
pub use koopman::{
    invariance_proximity, FunctionVec, KoopmanError, KoopmanModel, ProximityAnalysis,
    ProximityReport, Tolerances,
};
pub use space::{
    Domain, EmpiricalSpace, GramMatrix, InnerProductSpace, QuadratureSpace, SpaceError,
};
