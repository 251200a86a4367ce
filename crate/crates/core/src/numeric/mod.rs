//! Dense linear algebra, sparse graph storage and automatic differentiation.

pub mod adam;
pub mod matrix;
pub mod sparse;
pub mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use sparse::SparseAdjacency;
pub use tape::{BatchStats, Gradients, Tape, Var};
