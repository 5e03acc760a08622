//! Core library for running context-dependent bandit experiments with
//! language-model or synthetic agents and analyzing the resulting choices.
//!
//! The pipeline has four stages, each with its own modules:
//!
//! 1. **Simulate** — [`taskdef`] defines the bandit tasks, [`promptgen`]
//!    renders them into natural-language prompts, [`agents`] produces
//!    choices (remote chat endpoints or in-process synthetic agents), and
//!    [`runner`] orchestrates training/transfer phases into JSONL logs.
//! 2. **Model** — [`cogmodel`] implements the eight-member RL model family
//!    (absolute/relative outcome encoding, one/two learning rates, one/two
//!    inverse temperatures) and replays logs into likelihoods.
//! 3. **Fit** — [`fitting`] runs multi-start bounded maximum likelihood and
//!    BIC model comparison, with a parameter-recovery harness.
//! 4. **Analyze** — [`analysis`] computes accuracy and relative-value-bias
//!    metrics against an exact ideal-agent oracle; [`probe`] regresses
//!    externally supplied hidden-unit activations on value-difference
//!    predictors.

pub mod agents;
pub mod analysis;
pub mod cogmodel;
pub mod error;
pub mod fitting;
pub mod probe;
pub mod promptgen;
pub mod rng;
pub mod runner;
pub mod taskdef;

pub use error::{Error, Result};
