//! Feature monosemanticity scoring (FMS) and guided sparse autoencoders (G-SAE).
//!
//! The crate is organised around a small pipeline:
//!
//! - [`store`]: activation datasets and the `GSAD` binary container,
//!   stratified splitting and minority oversampling.
//! - [`benchgen`]: synthetic activations with planted concept directions and
//!   the analytic oracle autoencoder that scores perfectly on them.
//! - [`gsae`]: the TopK-sigmoid sparse autoencoder, its losses, analytic
//!   gradients, Adam training and the `GSAM` checkpoint format.
//! - [`fms`]: Gini decision trees over latents, capacity/ablation curves and
//!   the local, global and aggregate monosemanticity scores.
//! - [`detection`]: encoder-only concept detection and Mann–Whitney /
//!   rank-biserial separation statistics.
//! - [`steering`]: decoder-column steering with magnitude normalisation and
//!   presence balancing.
//! - [`cli`]: the `gsae` command-line front end.

pub mod benchgen;
pub mod cli;
pub mod detection;
mod error;
pub mod fms;
pub mod gsae;
pub mod real;
pub mod steering;
pub mod store;

pub use error::{Error, Result};
pub use gsae::GsaeModel;
pub use store::ActivationDataset;
