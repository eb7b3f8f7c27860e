//! Measures whether primitive-concept activations from a vision-language
//! model support learning a useful and interpretable linear composition into
//! composite concepts.
//!
//! The pipeline is: load a [`bundle::DatasetBundle`] of activations and
//! ground-truth primitives, train a linear composition model
//! ([`composition`]), evaluate it on generalized compositional zero-shot
//! ([`czsl`]) or episodic few-shot ([`fewshot`]) protocols with optional
//! ground-truth [`intervention`], and inspect the learned weights
//! ([`weights`]). [`synth`] generates concept universes with known answers.

pub mod bundle;
pub mod composition;
pub mod czsl;
pub mod error;
pub mod fewshot;
pub mod intervention;
pub mod matrix;
pub mod report;
pub mod synth;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
