//! Goal-shape workbench: point-cloud metrics, a mass-spring tissue
//! simulator, scripted demonstrators, the goal-generation network and a
//! model-based shape servo.

pub mod cloud;
pub mod demo;
pub mod error;
pub mod goalnet;
pub mod servo;
pub mod sim;

pub use cloud::{fps_downsample, knn, Plane, PointCloud, Vec3};
pub use error::{Error, Result};
