//! Tool-calling agent that executes multi-turn business logic by driving
//! state machines ("flows") as tools, together with a deterministic retail
//! environment and a simulated-user evaluation harness.

pub mod retail;
pub mod context;
pub mod flow;
pub mod llm;
pub mod query;
pub mod retail_flows;
pub mod agent;
pub mod eval;
