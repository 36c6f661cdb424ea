//! Kolmogorov-Arnold network equalizers for PAM4 IM/DD access links.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`] simulates the optical link and produces synchronized
//!   2-sps [`WaveformFrame`]s with ground truth.
//! - [`spline`] holds the linear B-spline functions that make up a KAN layer,
//!   plus the slope/offset lookup-table path used for inference.
//! - [`equalizer`] composes convolutional KAN, CNN and FIR equalizers and
//!   counts their real-valued multiplications per symbol (rvms).
//! - [`training`], [`pruning`] and [`search`] implement the training loop,
//!   magnitude pruning with retraining, and the hyperparameter campaign with
//!   Pareto-front extraction.

pub mod channel;
pub mod equalizer;
mod error;
pub mod io;
pub mod pam4;
pub mod pruning;
pub mod search;
pub mod seed;
pub mod spline;
pub mod training;

pub use channel::{LinkConfig, WaveformFrame};
pub use equalizer::{Architecture, ConvLayerSpec, EqualizerModel, LayerKind, RvmsReport};
pub use error::{Error, Result};
pub use spline::{KanLayerDense, LutCompiled, SplineFunction, SplineGrid};
pub use training::{TrainConfig, TrainRecord};
