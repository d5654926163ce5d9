//! Terrain property learning from aerial and ground viewpoints.
//!
//! The crate turns ground-robot logs and aerial images into self-supervised
//! terrain labels, trains a small patch regressor, builds cost maps from
//! aerial imagery and plans paths over them. A synthetic scene kit closes
//! the loop for testing.

pub mod dataset;
pub mod features;
pub mod geometry;
pub mod io;
pub mod mapping;
pub mod pipeline;
pub mod planner;
pub mod predictor;
pub mod raster;
pub mod signals;
pub mod simkit;
