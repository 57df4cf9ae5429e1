//! Optimal transport toolkit.
//!
//! Exact linear-programming solvers, closed forms for 1-D and Gaussian
//! measures, the Sinkhorn family, semidiscrete and graph W1 solvers, the
//! dynamic (Benamou–Brenier) formulation, weak losses, barycenters and
//! JKO stepping. Every solver works on dense `ndarray` storage.

pub mod barycenter;
pub mod closed_form;
pub mod dynamic_bb;
pub mod entropic;
mod error;
pub mod exact_lp;
pub mod graph_w1;
mod linalg;
pub mod measure;
pub mod semidiscrete;
pub mod tolerances;
pub mod variational;
pub mod weak_losses;

pub use error::{Error, Result};
pub use measure::{
    barycentric_projection, build_cost, push_forward, validate_plan, CostMatrix, DiscreteMeasure,
    DualPair, GroundCost, Histogram, MassMode, Residuals, Scalings, TransportPlan,
};
