//! Desk-scale 2.5D embodied navigation simulator.

pub mod agents;
pub mod bench;
pub mod episodes;
pub mod geometry;
pub mod index;
pub mod nav;
pub mod rng;
pub mod scene;
pub mod sensors;
pub mod sim;
pub mod task;
