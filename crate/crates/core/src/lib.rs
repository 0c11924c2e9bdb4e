//! Workbench for studying CNN image classification under quality degradation.
//!
//! * [`image`]: rasters, PNM I/O, resizing, fidelity metrics
//! * [`degrade`]: Gaussian, speckle, salt-and-pepper and JPEG degradations
//! * [`denoise`]: non-local means, bilateral and total-variation preprocessing
//! * [`nn`]: a small hand-differentiated CNN with a dual-channel classifier
//! * [`pipeline`]: datasets, training strategies, grid evaluation and reports

pub mod degrade;
pub mod denoise;
pub mod image;
pub mod kv;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sample;

pub use image::Image;
