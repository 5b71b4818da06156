//! Multi-motivation behavior modeling.
//!
//! Learns per-signal action-value functions off-policy from logged
//! trajectories, recovers the linear combination weights over motivation
//! signals with a slack-variable linear program, and uses the recovered
//! reward structure to predict behavior and track motivation drift.

pub mod error;
pub mod schema;
pub mod trajectory;
