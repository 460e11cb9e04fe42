//! Multi-objective one-shot neural architecture search with adversarially
//! trained weight-sharing supernets.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`supernet`] — train a weight-sharing supernet under TRADES-YOPO
//!    adversarial training, sampling constrained subnets uniformly.
//! 2. [`search`] — NSGA-II over subnet genomes with supernet-cloned fitness:
//!    (clean error, adversarial error, parameter count), all minimized.
//! 3. [`analysis`] — retrain searched subnets from scratch or by fine-tuning,
//!    evaluate attack grids, and distil layer statistics into a Lego genome.
//! 4. [`runner`] — file-based orchestration behind the `tamnas` binary.
//!
//! Everything runs on a small CPU tensor engine ([`tensor`]) with
//! reverse-mode autodiff, so the whole pipeline is dependency-light and
//! deterministic for a fixed seed.

pub mod adversarial;
pub mod data;
pub mod error;
pub mod rng;
pub mod space;
pub mod supernet;
pub mod blocks;
pub mod tensor;

pub use error::{Error, Result};
