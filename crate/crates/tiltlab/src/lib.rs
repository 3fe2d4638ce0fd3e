//! Toolkit for injecting adversarial vulnerabilities into classifiers
//! without changing their behavior on natural data.
//!
//! The attacks all exploit the same structural fact: natural image
//! datasets have many directions of (near-)zero variance, and a model can
//! be made arbitrarily sensitive along those directions while its
//! responses on the data distribution stay untouched. The crate provides
//!
//! - [`tilt`]: boundary tilting of binary linear classifiers, pixel
//!   backdoors for MLPs, and the generic PCA-basis tilting attack on a
//!   fully-connected layer;
//! - [`stego`]: a steganogram encoder/decoder built by tilting the
//!   identity map in image space;
//! - [`poison`]: imperceptible-backdoor data poisoning with a decaying
//!   corruption threshold;
//! - [`advgen`]: the targeted normalized-gradient attack (with
//!   temperature calibration in [`network`]) used to measure how
//!   vulnerable a model actually is;
//! - [`pca`], [`network`], [`dataio`]: the supporting PCA, classifier,
//!   and dataset machinery.

// Force linkage of the system BLAS backing ndarray's matrix products.
extern crate blas_src;

pub mod advgen;
pub mod dataio;
pub mod error;
pub mod network;
pub mod pca;
pub mod poison;
pub mod stego;
pub mod tilt;

pub use error::{Error, Result};
