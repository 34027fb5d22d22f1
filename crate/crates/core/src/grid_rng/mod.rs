//! Uniform time grid and counter-based Brownian sampling.

mod brownian;
mod grid;

pub use brownian::{sample_brownian, BrownianBundle};
pub use grid::{make_grid, TimeGrid};
