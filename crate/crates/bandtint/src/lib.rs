//! Frequency-band colorization refinement at desk scale.
//!
//! The crate splits an image into low/mid/high frequency bands with hard
//! circular spectral masks, colorizes each band with a small trainable
//! encoder-decoder, removes the ringing artifacts of the hard filters with a
//! gated U-Net, and corrects global color casts from per-region mean colors.
//! Everything runs on a minimal reverse-mode autodiff tensor engine so that
//! the whole pipeline is trainable, checkable against finite differences, and
//! bitwise reproducible from a seed.

#![allow(clippy::needless_range_loop)]

pub mod imaging;
pub mod objectives;
pub mod pipeline;
pub mod regions;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub mod models;

mod error;

pub use error::Error;

/// Crate-wide result alias for everything above the tensor engine.
pub type Result<T> = std::result::Result<T, Error>;
