//! Cross-validated maximum penalised likelihood for the skew normal
//! location-scale model.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`]: density, moments, sampling and the `γ₁ ↔ δ ↔ α ↔ θ` maps;
//! * [`estimation`]: log-likelihood, scores, penalties, moment starts;
//! * [`pem`]: the penalised EM optimiser and the MLE / fixed-penalty fits;
//! * [`cv`]: K-fold selection of the penalty coefficient;
//! * [`sim`]: reproducible simulation studies;
//! * [`pipeline`]: per-series fitting and K-means over the fitted triples.
//!
//! Fold fits, replicates and series are independent tasks; with the
//! `parallel` feature (default) they run on rayon, otherwise sequentially,
//! and both paths give bitwise identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cv;
pub mod dist;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod pem;
pub mod pipeline;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
