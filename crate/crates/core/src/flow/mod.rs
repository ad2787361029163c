//! Generic runtime for flows: state machines the agent drives as tools.
//!
//! A [`FlowDefinition`] declares states, typed constructor params, slots,
//! transitions keyed on the exact input key set, and per-state instruction
//! templates. Domain behaviour lives in named [`Effect`]s registered with the
//! [`FlowEngine`]; the engine itself knows nothing about the domain.

mod definition;
mod engine;
mod session;

pub use definition::{
    ConstructorStep, DefinitionError, FlowBuilder, FlowDefinition, InputPattern, ParamSpec,
    ResumeGuard, SlotSpec, StateId, StateView, Transition, ValueType,
};
pub use engine::{
    Constructed, Effect, EffectCall, EffectFailure, EffectOutput, FlowEngine, TransitionResult,
};
pub use session::{
    deserialize_session, serialize_session, ExpectedInput, FlowInfo, FlowInstance, SessionState,
    SESSION_VERSION,
};

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("unknown flow type {0}")]
    UnknownFlowType(String),
    #[error("missing required param {0}")]
    MissingParam(String),
    #[error("unknown param {0}")]
    UnknownParam(String),
    #[error("{name} must be a {expected}")]
    TypeMismatch { name: String, expected: String },
    #[error("flow could not be started: {message}")]
    ConstructorEffectFailed { message: String, detail: Value },
    #[error("unknown flow instance {0}")]
    UnknownInstance(String),
    #[error("unknown slot {0}")]
    UnknownSlot(String),
    #[error("incompatible input in state {state}: {reason}")]
    IncompatibleInput { state: String, reason: String },
    #[error("flow {0} is paused")]
    FlowPaused(String),
    #[error("flow {0} is not paused")]
    NotPaused(String),
    #[error("flow {instance_id} cannot resume while {blocked_by} is active")]
    ResumeBlocked {
        instance_id: String,
        blocked_by: String,
    },
    #[error("an active flow {0} already handles this")]
    DuplicateFlow(String),
    #[error("effect failed: {message}")]
    EffectFailed { message: String, detail: Value },
    #[error("malformed session: {0}")]
    MalformedSession(String),
}
