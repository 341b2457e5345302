//! SGD recursions and their SDE models for least-squares problems, with
//! Euler–Maruyama ensembles and numerical checks of the associated bounds.

pub mod analysis;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod linalg;
pub mod noise;
pub mod problem;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{ProblemInstance, Regime, SpectralSummary};
