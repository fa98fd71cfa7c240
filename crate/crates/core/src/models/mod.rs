//! Learned per-primitive models: feature encoding, dataset generation,
//! feasibility classifiers, policies, dynamics, and distribution guards.

pub mod checkpoint;
pub mod dataset;
pub mod dynamics;
pub mod features;
pub mod ood;
pub mod policy;
pub mod qfn;
pub(crate) mod train;

pub use train::TrainError;
