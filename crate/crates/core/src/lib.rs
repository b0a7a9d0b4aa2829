//! Planning, learning and reasoning for robotic truck unloading.

pub mod chooser;
pub mod executor;
pub mod generator;
pub mod harness;
pub mod motion;
pub mod sim;
pub mod strategy;
pub mod world;
