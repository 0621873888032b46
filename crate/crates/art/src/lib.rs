//! Ask-Refine-Trust (ART): a model-agnostic reasoning refinement pipeline.
//!
//! Given a task query and an initial prediction from a generation backend,
//! the pipeline asks sub-questions to decide whether the prediction needs
//! refinement (`asker`), refines it when requested (`refiner`), and selects
//! between the initial and refined candidates with a trainable pairwise
//! ranking scorer (`truster`). The crate also ships the dataset builders
//! used to train the Asker and Truster, evaluation harnesses with
//! majority-vote support, refinement-rate sweeps, and a closed-form /
//! Monte Carlo simulator of the whole cascade.

pub mod answers;
pub mod asker;
pub mod backend;
pub mod pipeline;
pub mod prompts;
pub mod refiner;
pub mod simulator;
pub mod truster;
pub mod types;

pub(crate) mod hash;
pub(crate) mod pool;
pub(crate) mod rng;

pub mod cli;
