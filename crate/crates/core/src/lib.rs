//! Multi-bubble cluster constructions for the perturbed Yamabe equation
//! `−Δ_g u + (β_N R_g + ε) u = u^{(N+2)/(N−2)}` in dimension `N ≥ 7`.
//!
//! The library evaluates the standard bubble and its kernel, solves for the
//! curvature correction term, tabulates the reduced-energy constants, locates
//! critical cluster configurations of the reduced energy and measures the
//! asymptotic estimates of the ansatz by Monte Carlo quadrature.

pub mod ansatz;
pub mod bubble;
pub mod constants;
pub mod correction;
pub mod error;
pub mod geometry;
pub mod manifest;
pub mod mc;
pub mod optimizer;
pub mod radial;
pub mod reduced;
pub mod scaling;
pub mod scan;
pub mod verify;

pub use bubble::{BubbleParams, Dim, Exponents};
pub use error::{Error, Result};
pub use geometry::GeometryData;
