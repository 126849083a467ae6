//! Desk-scale laboratory for feature-driven reinforcement-learning intraday
//! trading of photovoltaic power.
//!
//! The crate is organized around a single pipeline:
//!
//! 1. [`market_data`] generates (or loads) calibrated hourly market and plant
//!    series for a 10 MW-class PV asset.
//! 2. [`features`] turns causal windows of those series into a standardized
//!    feature vector.
//! 3. [`execution`] holds the per-period trade optimizer, the trading-cost
//!    model and the stylized limit-order fill model.
//! 4. [`mdp`] wraps everything into a finite-horizon trading environment
//!    (one episode = one delivery day = 24 hourly rounds).
//! 5. [`policy`] is the interpretable linear-Gaussian actor/critic.
//! 6. [`training`] implements the PPO loops (plain and risk-shaped).
//! 7. [`baselines`] are the comparison strategies.
//! 8. [`evaluation`] runs scenario grids, metrics, latency and weight reports.
//!
//! Everything is deterministic given a named seed; no wall-clock seeding
//! anywhere.

pub mod baselines;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod execution;
pub mod features;
pub mod market_data;
pub mod mdp;
pub mod policy;
pub mod rng;
pub mod training;


pub use config::RunConfig;
pub use error::CoreError;
