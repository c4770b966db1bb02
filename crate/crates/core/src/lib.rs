//! Detection and construction of pitchfork bifurcations of codimension-1
//! invariant manifolds for maps and flows.

pub mod error;
pub mod dynsys;
pub mod geometry;
pub mod graphtransform;
pub mod hypotheses;
pub mod flow;
pub mod simulate;

pub use error::{Error, Result};
