//! Attentive pooling laboratory for utterance-level embedding learning.
//!
//! Frame sequences pass through a small per-frame extractor, are pooled by
//! temporal averaging (TAP) or self-attentive pooling (SAP), and mapped to an
//! embedding by a fully-connected head. The context vector of SAP can be
//! supervised with classifier feedback (APF, ANF, ADF). Every gradient is
//! written by hand and checked against central finite differences.
//!
//! Module map:
//! - [`numerics`]: matrices, stable softmax, seeded RNG, gradient checker
//! - [`data`]: frame sequences, normalization, cropping, synthetic speakers, feature files
//! - [`network`]: trainable parameters with forward and backward passes, checkpoints
//! - [`pooling`]: TAP and SAP with gradients
//! - [`objectives`]: softmax, AM-Softmax, prototypical loss, context-vector losses
//! - [`eval`]: trials, cosine scoring, EER, minDCF, DET curves
//! - [`harness`]: episodes, SGD, learning-rate schedule, training and evaluation

pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod network;
pub mod numerics;
pub mod objectives;
pub mod pooling;

pub use error::{Error, Result};
