//! Idle-time speculative drafting for tool-using agents.
//!
//! While a tool call runs, the agent's model would otherwise sit idle. This
//! crate fills that gap with short candidate next-step drafts, picks the
//! drafting strategy with a Beta-Bernoulli bandit fed by a forecast signal,
//! and measures how much of the idle time was put to use.

pub mod bandit;
pub mod clock;
pub mod config;
#[cfg(feature = "live")]
pub mod live;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod prompts;
pub mod report;
pub mod sim;
pub mod speculation;
pub mod tools;
pub mod trace;
pub mod types;
