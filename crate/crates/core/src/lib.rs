//! Tactile telemanipulation building blocks: simulated 10x10 fingertip
//! sensors, a CNN that classifies the tilt of a grasped pipette, rendering
//! onto 5x4 electro-tactile arrays, and the two-node network loop that ties
//! them together.

pub mod dataset;
pub mod error;
pub mod manifest;
pub mod netlink;
pub mod render;
pub mod resample;
pub mod sim;
pub mod tactile;
pub mod tiltnet;

pub use error::{Error, Result};
