//! Trajectory-level evidence tracking (EviTrack) for sequential latent-variable
//! models, together with SIS and bootstrap particle-filter baselines and the
//! double-well delayed-disambiguation benchmark.
//!
//! The crate is organised bottom-up:
//!
//! - [`world_model`]: double-well dynamics, piecewise emission, simulation.
//! - [`exact_filter`]: grid-quadrature ground-truth filter, disambiguation
//!   time detection and balanced dataset generation.
//! - [`scoring`]: joint, evidence and background-normalised trajectory scores.
//! - [`inference`]: the hypothesis-set loop for EviTrack, SIS and BPF.
//! - [`metrics`]: forecasting and filtering metrics.
//! - [`harness`]: experiment orchestration, alignment and aggregation.
//! - [`config`]: the run configuration file.
//! - [`verify`]: the built-in oracle suite.

pub mod config;
pub mod error;
pub mod exact_filter;
pub mod harness;
pub mod inference;
pub mod math;
pub mod metrics;
pub mod rng;
pub mod scoring;
pub mod verify;
pub mod world_model;

pub use error::{Error, Result};
pub use exact_filter::{DdBin, DdBins, PosteriorGrid, QuadratureGrid};
pub use inference::{GlobalInterval, HypothesisSet, InferenceConfig, Method, MixtureWeights};
pub use scoring::ScoreKind;
pub use world_model::{Trajectory, WorldModelParams};
