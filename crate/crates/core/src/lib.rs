//! Hierarchical multi-label contrastive representation learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`hierarchy`]: label paths, the taxonomy tree and per-level pair masks
//! * [`losses`]: HiMulCon, HiConE, HiMulConE plus the SupCon and SimCLR
//!   baselines, all with analytic feature gradients
//! * [`sampling`]: epoch planning with per-level positives for each anchor
//! * [`model`]: MLP encoder with projection head, manual backprop, SGD
//! * [`data`]: synthetic hierarchical data, augmentation, splits, file I/O
//! * [`eval`]: retrieval, MAP@R, k-means NMI and hierarchy violation rate
//! * [`gradcheck`]: finite-difference verification of every gradient

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hierarchy;
pub mod losses;
pub mod model;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
