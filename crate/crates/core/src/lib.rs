//! Hierarchical inverse dynamics for floating-base legged robots.

pub mod bench;
pub mod cascade;
pub mod controllers;
pub mod linalg;
pub mod model;
pub mod qpcore;
pub mod sim;
pub mod spatial;
pub mod tasks;
