//! Geodesic flow, sojourn relations, short-time WKB parametrix and reference
//! Schrödinger solvers on asymptotically conic manifolds.

pub mod cli;
pub mod config;
pub mod error;
pub mod extrap;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod parametrix;
pub mod pde;
pub mod sojourn;

pub use error::{Error, Result};
