//! Desk-scale laboratory for fatigue-aware learning-to-defer.
//!
//! A simulated human expert whose accuracy follows a workload-dependent
//! fatigue curve is paired with a frozen AI classifier. A recurrent deferral
//! policy decides, step by step, which of the two produces the final
//! prediction, and is trained as a constrained MDP (PPO with Lagrangian
//! multipliers) under a per-episode deferral budget. Evaluation produces
//! accuracy-coverage curves and AUACC summaries against static baselines.

pub mod actors;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod fatigue;
pub mod net;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
