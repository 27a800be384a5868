//! Visual odometry for a car-like vehicle with a camera looking straight
//! down at the ground, without matching features between frames.
//!
//! The crate searches the two motion parameters (half turn angle and chord
//! length) by branch and bound, maximising the number of keypoint pairs that
//! register within a pixel threshold. No descriptor matching is involved.

pub mod baseline;
pub mod bounds;
pub mod dataset;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod simulate;
pub mod solver;
