//! Multi-agent reinforcement learning from multi-phase human feedback on a
//! cooperative gridworld kitchen.

pub mod config;
pub mod env;
mod episode;
pub mod expr;
pub mod feedback;
pub mod learner;
pub mod orchestrate;
pub mod pool;
pub mod rollout;
pub mod run;
pub mod templates;
pub mod train;
