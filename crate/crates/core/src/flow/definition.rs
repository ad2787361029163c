use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub type StateId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    String,
    Bool,
    Integer,
    StringList,
    Object,
    Any,
}

impl ValueType {
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ValueType::String => value.is_string(),
            ValueType::Bool => value.is_boolean(),
            ValueType::Integer => value.is_i64() || value.is_u64(),
            ValueType::StringList => value
                .as_array()
                .is_some_and(|a| a.iter().all(Value::is_string)),
            ValueType::Object => value.is_object(),
            ValueType::Any => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Bool => "boolean",
            ValueType::Integer => "integer",
            ValueType::StringList => "list of strings",
            ValueType::Object => "object",
            ValueType::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub value_type: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub value_type: ValueType,
    pub required: bool,
}

/// Constraint on one key of a transition input.
#[derive(Debug, Clone, PartialEq)]
pub enum InputPattern {
    OfType(ValueType),
    Equals(Value),
}

impl InputPattern {
    pub fn matches(&self, value: &Value) -> bool {
        match self {
            InputPattern::OfType(t) => t.accepts(value),
            InputPattern::Equals(v) => v == value,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InputPattern::OfType(t) => format!("<{}>", t.name()),
            InputPattern::Equals(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: StateId,
    /// Matched on the exact key set; every value must satisfy its pattern.
    pub inputs: BTreeMap<String, InputPattern>,
    /// Slots that must be filled before this edge can be taken.
    pub required_slots: Vec<String>,
    pub to: StateId,
    pub effect: Option<String>,
    /// Pause the instance after traversing.
    pub pause: bool,
    /// Edge only traversable in a later turn than the one that created the
    /// instance, so the user has seen the flow's suggested message.
    pub requires_later_turn: bool,
}

/// Templates rendered for the agent while an instance sits in a state.
/// `{name}` placeholders resolve against params, slots and internals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateView {
    pub instructions: String,
    pub suggested_message: Option<String>,
}

/// A paused instance may only resume once no active instance of
/// `blocking_flow_type` shares its value of `shared_param`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResumeGuard {
    pub blocking_flow_type: String,
    pub shared_param: String,
}

/// Effect run at instantiation; on success the instance moves to `then`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstructorStep {
    pub effect: String,
    pub then: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDefinition {
    pub flow_type: String,
    pub description: String,
    pub states: BTreeSet<StateId>,
    pub initial: StateId,
    pub terminal: BTreeSet<StateId>,
    pub params: Vec<ParamSpec>,
    /// Param identifying the business object (e.g. `order_id`); at most one
    /// unpaused instance per (flow type, key value).
    pub key_param: Option<String>,
    pub slots: BTreeMap<String, SlotSpec>,
    pub constructor: Option<ConstructorStep>,
    pub transitions: Vec<Transition>,
    pub views: BTreeMap<StateId, StateView>,
    pub paused_hint: String,
    pub resume_guard: Option<ResumeGuard>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid flow definition {flow_type}: {message}")]
pub struct DefinitionError {
    pub flow_type: String,
    pub message: String,
}

impl FlowDefinition {
    pub fn builder(flow_type: &str, initial: &str) -> FlowBuilder {
        FlowBuilder {
            def: FlowDefinition {
                flow_type: flow_type.to_string(),
                description: String::new(),
                states: BTreeSet::from([initial.to_string()]),
                initial: initial.to_string(),
                terminal: BTreeSet::new(),
                params: Vec::new(),
                key_param: None,
                slots: BTreeMap::new(),
                constructor: None,
                transitions: Vec::new(),
                views: BTreeMap::new(),
                paused_hint: "This flow is paused.".to_string(),
                resume_guard: None,
            },
        }
    }

    pub fn is_terminal(&self, state: &str) -> bool {
        self.terminal.contains(state)
    }

    pub fn transitions_from<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a Transition> {
        self.transitions.iter().filter(move |t| t.from == state)
    }

    /// Every effect id mentioned by the definition.
    pub fn effect_ids(&self) -> BTreeSet<&str> {
        let mut ids: BTreeSet<&str> = self
            .transitions
            .iter()
            .filter_map(|t| t.effect.as_deref())
            .collect();
        if let Some(c) = &self.constructor {
            ids.insert(&c.effect);
        }
        ids
    }

    pub fn validate(&self) -> Result<(), DefinitionError> {
        let fail = |message: String| {
            Err(DefinitionError {
                flow_type: self.flow_type.clone(),
                message,
            })
        };
        if self.terminal.is_empty() {
            return fail("no terminal state".into());
        }
        if self.terminal.contains(&self.initial) {
            return fail("initial state is terminal".into());
        }
        for state in self.terminal.iter().chain(self.views.keys()) {
            if !self.states.contains(state) {
                return fail(format!("unknown state {state}"));
            }
        }
        if let Some(c) = &self.constructor {
            if !self.states.contains(&c.then) {
                return fail(format!("constructor targets unknown state {}", c.then));
            }
        }
        for t in &self.transitions {
            if !self.states.contains(&t.from) || !self.states.contains(&t.to) {
                return fail(format!("transition {} -> {} uses unknown state", t.from, t.to));
            }
            if self.terminal.contains(&t.from) {
                return fail(format!("transition leaves terminal state {}", t.from));
            }
            if let Some(s) = t.required_slots.iter().find(|s| !self.slots.contains_key(*s)) {
                return fail(format!("transition requires undeclared slot {s}"));
            }
        }
        if let Some(key) = &self.key_param {
            if !self.params.iter().any(|p| &p.name == key) {
                return fail(format!("key param {key} is not a param"));
            }
        }
        if let Some(guard) = &self.resume_guard {
            if !self.params.iter().any(|p| p.name == guard.shared_param) {
                return fail(format!("resume guard param {} is not a param", guard.shared_param));
            }
        }
        for p in &self.params {
            if self.slots.contains_key(&p.name) {
                return fail(format!("{} is both a param and a slot", p.name));
            }
        }
        Ok(())
    }
}

pub struct FlowBuilder {
    def: FlowDefinition,
}

impl FlowBuilder {
    pub fn description(mut self, text: &str) -> Self {
        self.def.description = text.to_string();
        self
    }

    pub fn state(mut self, id: &str, instructions: &str, suggested: Option<&str>) -> Self {
        self.def.states.insert(id.to_string());
        self.def.views.insert(
            id.to_string(),
            StateView {
                instructions: instructions.to_string(),
                suggested_message: suggested.map(str::to_string),
            },
        );
        self
    }

    pub fn terminal(mut self, id: &str, instructions: &str) -> Self {
        self = self.state(id, instructions, None);
        self.def.terminal.insert(id.to_string());
        self
    }

    pub fn param(mut self, name: &str, value_type: ValueType) -> Self {
        self.def.params.push(ParamSpec {
            name: name.to_string(),
            value_type,
        });
        self
    }

    pub fn key_param(mut self, name: &str) -> Self {
        self.def.key_param = Some(name.to_string());
        self
    }

    pub fn slot(mut self, name: &str, value_type: ValueType, required: bool) -> Self {
        self.def.slots.insert(
            name.to_string(),
            SlotSpec {
                value_type,
                required,
            },
        );
        self
    }

    pub fn constructor(mut self, effect: &str, then: &str) -> Self {
        self.def.constructor = Some(ConstructorStep {
            effect: effect.to_string(),
            then: then.to_string(),
        });
        self
    }

    pub fn transition(mut self, t: Transition) -> Self {
        self.def.transitions.push(t);
        self
    }

    pub fn paused_hint(mut self, text: &str) -> Self {
        self.def.paused_hint = text.to_string();
        self
    }

    pub fn resume_guard(mut self, blocking_flow_type: &str, shared_param: &str) -> Self {
        self.def.resume_guard = Some(ResumeGuard {
            blocking_flow_type: blocking_flow_type.to_string(),
            shared_param: shared_param.to_string(),
        });
        self
    }

    pub fn build(self) -> FlowDefinition {
        self.def
    }
}

impl Transition {
    pub fn on(from: &str, to: &str) -> Self {
        Transition {
            from: from.to_string(),
            inputs: BTreeMap::new(),
            required_slots: Vec::new(),
            to: to.to_string(),
            effect: None,
            pause: false,
            requires_later_turn: false,
        }
    }

    pub fn when(mut self, key: &str, pattern: InputPattern) -> Self {
        self.inputs.insert(key.to_string(), pattern);
        self
    }

    pub fn when_eq(self, key: &str, value: Value) -> Self {
        self.when(key, InputPattern::Equals(value))
    }

    pub fn requires(mut self, slot: &str) -> Self {
        self.required_slots.push(slot.to_string());
        self
    }

    pub fn effect(mut self, id: &str) -> Self {
        self.effect = Some(id.to_string());
        self
    }

    pub fn pausing(mut self) -> Self {
        self.pause = true;
        self
    }

    pub fn after_user_reply(mut self) -> Self {
        self.requires_later_turn = true;
        self
    }
}
