//! CGRN: a character glyph recognition-and-generation network.
//!
//! A multi-task convolutional GAN that classifies characters photographed
//! in cluttered scenes while simultaneously generating clean canonical
//! glyph images of the same character in several fonts. Everything —
//! tensors, reverse-mode differentiation, the optimizer, image I/O and the
//! synthetic training corpus — is implemented here in pure Rust with `f64`
//! arithmetic and fully deterministic seeding.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod ops;
pub mod optim;
pub mod train;
pub mod verify;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
