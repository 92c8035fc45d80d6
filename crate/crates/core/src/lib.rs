//! Identity-preserving portrait generation.
//!
//! The crate covers the data path from uploaded photos to generated portraits:
//! face normalization and labeling, adapter training and composition, the
//! generation and inpainting pipelines, and the applications built on them.
//! External models are reached through the role traits in [`backends`].

pub mod applications;
pub mod backends;
pub mod controls;
pub mod error;
pub mod face_normalization;
pub mod fixtures;
pub mod generation;
pub mod geometry;
pub mod inpaint;
pub mod labeling;
pub mod landmarks;
pub mod lora;
pub mod picture;

pub use error::{Error, Result};
