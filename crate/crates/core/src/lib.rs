//! Adversarial data augmentation for heatmap pose estimation.
//!
//! A generator ([`aug_net::AugNet`]) reads the bridge features of a small U-net
//! pose network ([`pose_net::PoseNet`]) and predicts distributions over
//! scale bins, rotation bins and occlusion cells. Augmentations sampled from
//! those distributions are compared against random augmentations; the
//! outcome rewards or penalizes the sampled bins, which in turn becomes the
//! generator's online target. The pose network trains on the sampled hard
//! augmentations.
//!
//! Everything runs on a from-scratch reverse-mode substrate ([`net`]) so the
//! whole loop is deterministic and inspectable on a single CPU core.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aug_net;
pub mod error;
pub mod geometry;
pub mod net;
pub mod policy;
pub mod pose_net;
pub mod pretrain;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
