//! Conformal prediction on deterministically encrypted image data.
//!
//! This crate implements the full experimental pipeline:
//!
//! 1. [`data`] — MNIST-shaped IDX ingestion, pixel normalization, and the
//!    deterministic calibration / conformal-test split.
//! 2. [`cipher`] — AES-128-CBC encryption of whole datasets under a fixed
//!    key/IV (deterministic: identical images map to identical ciphertexts),
//!    plus a per-sample-key ablation mode that destroys cross-example
//!    structure.
//! 3. [`mlp`] — a small fully connected classifier trained by minibatch SGD
//!    directly on (possibly encrypted) 784-byte inputs; its cross-entropy
//!    loss doubles as the nonconformity score.
//! 4. [`conformal`] — split/inductive conformal prediction: p-value
//!    (order-statistic) and e-value (bounded-from-below predictor)
//!    thresholds, prediction-set construction, and Monte Carlo validation of
//!    the underlying coverage inequalities.
//! 5. [`evaluation`] — coverage counts, set-size histograms, and report
//!    rendering.
//! 6. [`viz`] — exact t-SNE embeddings, digit rasters, and calibration-score
//!    plot data.
//!
//! Everything is seeded: given the same inputs, seeds, and configuration,
//! every stage reproduces its outputs byte for byte.

pub mod cipher;
pub mod conformal;
pub mod data;
pub mod evaluation;
pub mod fingerprint;
pub mod mlp;
pub mod viz;

pub use cipher::{CipherConfig, CipherMode};
pub use conformal::{CalibrationScores, PredictionSet, Rule};
pub use data::{ImageSet, Provenance, SplitPair};
pub use evaluation::PredictionReport;
pub use mlp::{MlpModel, TrainConfig};


