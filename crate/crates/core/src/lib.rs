//! Auditing toolkit for LLM-agent execution trajectories.
//!
//! The crate is organised around the life cycle of a labeled trajectory:
//!
//! - [`trajectory`]: the data model and the JSONL dataset format.
//! - [`synth`]: perturb-and-complete synthesis of labeled anomalies from golden seeds.
//! - [`metrics`]: detection and joint localization metrics.
//! - [`verifier`]: audit prompts, diagnostic report parsing and verifier implementations.
//! - [`monitor`]: the check-and-act loop with rollback-and-retry.
//! - [`scriptenv`]: a deterministic, checkpointable toy environment with scripted agents.
//! - [`gateway`]: chat-completions client with retries and record/replay.

#![forbid(unsafe_code)]

pub mod gateway;
pub mod metrics;
pub mod monitor;
pub mod ratio;
pub mod rng;
pub mod scriptenv;
pub mod synth;
pub mod trajectory;
pub mod verifier;

pub use trajectory::{
    Action, AnomalyLabel, AnomalyType, Dataset, Domain, LabeledTrajectory, Step, Trajectory,
    Verdict,
};
