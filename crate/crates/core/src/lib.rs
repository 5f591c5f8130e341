//! Design-based individual prediction under probability sampling.
//!
//! Outcomes and features of a finite population are fixed constants; a sample
//! is drawn by a known design, split repeatedly into training and test parts,
//! and the predictions are averaged over the splits (subsampling
//! Rao-Blackwellisation). The risk of the averaged predictor over repeated
//! sampling is estimated without any model for the outcomes, and ensembles of
//! learners are combined by expected majority vote or by simplex weights.

pub mod design;
pub mod ensemble;
pub mod error;
pub mod learners;
pub mod oracle;
pub mod population;
pub mod rng;
pub mod simlab;
pub mod split;
pub mod srb;

pub use error::{Error, Result};
