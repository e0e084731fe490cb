//! Discrete optimal partial transport with free-boundary extraction and
//! sampled regularity certificates.
//!
//! The crate solves partial transport problems between finite point clouds
//! exactly, rebuilds the active region as a union of cost sublevel sets,
//! extracts its free boundary and checks the geometric predicates that the
//! boundary regularity argument rests on (cone and ball conditions, cone
//! envelopes, semiconvexity, c-convexity, the MTW tensor). A round-sphere
//! module covers the squared geodesic distance cost.

pub mod boundary;
pub mod cost;
pub mod geometry;
pub mod mtw;
pub mod output;
pub mod pipeline;
pub mod point;
pub mod scenario;
pub mod solver;
pub mod sphere;
pub mod tensor;

pub use cost::{CostConstants, CostError, CostModel};
pub use point::{DomainSample, Point, SampleRole};
