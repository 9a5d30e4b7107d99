//! Dense numerical substrate: matrices, seeded sampling, symmetric
//! eigendecomposition, reverse-mode differentiation and AdamW.

mod adamw;
mod linalg;
mod matrix;
mod rng;
mod tape;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use linalg::{psd_sqrt, sym_eigen, SymEigen};
pub use matrix::Matrix;
pub use rng::{gaussian_sample, SeedStream};
pub use tape::{Gradients, Tape, Var};
