//! Stein variational negotiation for cooperative multi-agent control.
//!
//! Agents hold a particle approximation of a joint Boltzmann policy and
//! negotiate over it with message-passing Stein updates.

pub mod agent;
pub mod diffgraph;
pub mod envs;
pub mod kernels;
mod linalg;
pub mod maxent_pi;
pub mod negotiation;
pub mod stein;
