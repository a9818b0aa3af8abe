//! Diversity regularization for gradient-based dataset condensation.
//!
//! The crate is organized bottom-up:
//!
//! * [`matrix`] and [`rng`]: dense `f64` matrices and seeded random streams.
//! * [`pairwise`]: all-pairs cosine / Euclidean kernels, k-NN radii, benchmarks.
//! * [`eigen`] and [`metrics`]: Jacobi eigensolver, coverage, Vendi score,
//!   intra-class cosine similarity.
//! * [`loss`]: the CD / CDM / EDM regularizer terms and their gradients.
//! * [`data`] and [`teacher`]: toy Gaussian-mixture data, the MLP teacher
//!   (training, stored feature statistics, feature extraction, relabeling)
//!   and student evaluation.
//! * [`synthesis`]: recovery of a condensed set from noise, ablations, weight sweeps.
//! * [`io`]: binary matrix and checkpoint files, configs, manifests.

pub mod data;
pub mod eigen;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod pairwise;
pub mod rng;
pub mod synthesis;
pub mod teacher;

pub use embedding::EmbeddingSet;
pub use error::{DireError, Result};
pub use matrix::Matrix;
pub use rng::Rng;
