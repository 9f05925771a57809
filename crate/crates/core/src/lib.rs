//! Accuracy-constrained mapping of neural-network layers onto hybrid
//! analog in-memory / digital hardware.
//!
//! The crate contains everything needed to reproduce the mapping study at desk
//! scale: a small reverse-mode training engine ([`autodiff`], [`optim`],
//! [`model`]), layer/MAC/tile arithmetic ([`network`]), a noisy crossbar
//! simulator with conductance drift ([`analog`]), the greedy mapper
//! ([`mapper`]), reference strategies ([`baselines`]), Pareto exploration
//! ([`explorer`]) and an analytical latency/energy model ([`perf`]).

pub mod analog;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod explorer;
pub mod mapper;
pub mod model;
pub mod network;
pub mod optim;
pub mod perf;
pub mod persist;
pub mod presets;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
