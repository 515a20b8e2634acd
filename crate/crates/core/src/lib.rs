//! Smoothed online learning for piecewise-affine (PWA) regression and
//! dynamical systems.

pub mod assignment;
pub mod dynamics;
pub mod erm;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod learner;
pub mod metrics;
pub mod rng;
pub mod simulation;
pub mod smoothing;
pub mod types;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use types::{AffineClassifier, AffineMap, Dataset, Dimensions, Observation};
