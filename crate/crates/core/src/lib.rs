#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod datagen;
pub mod dsep;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod ground;
pub mod metrics;
pub mod nagg;
pub mod netgen;
pub mod numeric;
pub mod rng;
pub mod schema;
