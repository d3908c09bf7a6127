//! Variably saturated flow in vertical soil sections with seepage faces.
//!
//! Richards' equation is discretized with lowest-order Raviart-Thomas fluxes
//! and piecewise-constant heads. The top boundary carries the unilateral
//! seepage conditions, imposed either by a penalized active set on the flux
//! equation or by an additional head trace unknown.

pub mod constitutive;
pub mod fem;
pub mod io_output;
pub mod linalg;
pub mod mesh;
pub mod scenario;
pub mod seepage;
