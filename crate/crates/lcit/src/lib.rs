//! Conditional independence testing via latent representations.
//!
//! The main entry point is [`independence::lcit`]: it maps X and Y through
//! conditional Gaussian-mixture CDF transforms learned from Z, so that under
//! conditional independence the resulting latents are independent standard
//! normals, then applies a Fisher-z zero-correlation test to the latents.
//!
//! Supporting modules provide a partial-correlation baseline, a synthetic
//! benchmark generator with known labels, an evaluation harness, and
//! d-separation utilities for extracting labeled test cases from known DAGs.

pub mod bench;
pub mod data;
pub mod error;
pub mod flow;
pub mod graph;
pub mod independence;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod synth;

pub use data::Dataset;
pub use error::{Error, Result};
pub use flow::{FlowParameters, TrainConfig};
pub use independence::{lcit, partial_correlation_test, Decision, TestResult};
pub use metrics::Hypothesis;
pub use numerics::Probability;
