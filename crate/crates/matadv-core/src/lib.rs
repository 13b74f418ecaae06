//! Point-cloud adversarial-attack laboratory built around a medial-axis
//! transform autoencoder: victim classifiers, the structured attack and a
//! PGD baseline, input-space defenses, and a synthetic-data experiment
//! harness.

pub mod attack;
pub mod autodiff;
pub mod defense;
pub mod error;
pub mod geom;
pub mod harness;
pub mod losses;
pub mod mat;
pub mod mat_train;
pub mod metrics;
pub mod nn;
pub mod seeds;
pub mod victims;
pub mod weights;

pub use error::{Error, Result};
pub use geom::PointCloud;
