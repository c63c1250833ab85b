//! Certified storage functions and invariant sets for input-affine systems,
//! built from continuous piecewise-affine functions on simplicial meshes.

pub mod expr;
pub mod mesh;
pub mod bounds;
pub mod cpa;
pub mod certify;
pub mod solve;
pub mod pipeline;
pub mod certificate;
pub mod verify;
pub mod export;
