//! Noise-robust classifier training on small dense datasets.
//!
//! The library trains a softmax MLP in two phases. A warm-up phase descends
//! plain cross-entropy on the (possibly corrupted) training labels. The
//! second phase adds a consistency penalty: for each mini-batch it fabricates
//! pseudo-labeled copies of the batch by swapping labels among nearest
//! neighbors, takes a virtual gradient step against each copy, measures how
//! far that step drags the predictions (KL divergence), and passes the score
//! through a rectifying weight `u * exp(-c * u)` that mutes both trivial and
//! catastrophic drifts. Descending the blended objective makes the model
//! reluctant to fit label noise while still following the real signal.
//!
//! Building blocks, bottom up:
//!
//! * [`matrix`]: dense row-major f64 matrices, generic over a scalar type so
//!   the same kernels run in dual-number arithmetic.
//! * [`tape`]: reverse-mode differentiation on a recorded op list, plus
//!   Hessian-vector products and the exact gradient of a loss evaluated
//!   through one inner gradient step ([`tape::grad_through_step`]).
//! * [`model`]: the MLP itself, its initializer, and checkpointing.
//! * [`losses`]: cross-entropy, the KL consistency score, rectification.
//! * [`pseudo`]: in-batch nearest neighbors and pseudo-label sets.
//! * [`noise`]: symmetric / asymmetric / mixed label corruption.
//! * [`data`]: synthetic datasets, CSV interchange, splitting.
//! * [`trainer`]: momentum SGD, the two-phase loop, metrics.
//! * [`metrics`]: accuracy, confusion counts, label-correction score.

pub mod data;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pseudo;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
