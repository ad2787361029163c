use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::definition::{DefinitionError, FlowDefinition, Transition};
use super::session::{
    render_template, render_value, ExpectedInput, FlowInfo, FlowInstance, SessionState,
};
use super::FlowError;

/// What an effect sees when it runs.
pub struct EffectCall<'a> {
    pub instance: &'a FlowInstance,
    pub turn_index: u64,
    pub authenticated_user_id: Option<&'a str>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EffectOutput {
    /// Merged into the instance's internals.
    pub internals: Map<String, Value>,
    pub output: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectFailure {
    pub message: String,
    pub detail: Value,
}

/// Named side effect attached to a constructor or an edge. The engine is
/// generic over the context type `C` the effect mutates.
pub trait Effect<C>: Send + Sync {
    fn run(&self, ctx: &mut C, call: &EffectCall<'_>) -> Result<EffectOutput, EffectFailure>;
}

impl<C, F> Effect<C> for F
where
    F: Fn(&mut C, &EffectCall<'_>) -> Result<EffectOutput, EffectFailure> + Send + Sync,
{
    fn run(&self, ctx: &mut C, call: &EffectCall<'_>) -> Result<EffectOutput, EffectFailure> {
        self(ctx, call)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constructed {
    pub instance_id: String,
    pub effect_output: Option<Value>,
    pub flow_info: FlowInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    pub instance_id: String,
    pub from_state: String,
    pub new_state: String,
    pub effect: Option<String>,
    pub effect_output: Option<Value>,
    pub flow_info: FlowInfo,
    /// Instances resumed because this one finished.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resumed: Vec<String>,
}

/// Registry of flow definitions and effects, and the operations that drive
/// instances stored in a [`SessionState`].
pub struct FlowEngine<C> {
    definitions: BTreeMap<String, FlowDefinition>,
    effects: BTreeMap<String, Box<dyn Effect<C>>>,
}

impl<C> Default for FlowEngine<C> {
    fn default() -> Self {
        Self::new()
    }
}

impl<C> FlowEngine<C> {
    pub fn new() -> Self {
        FlowEngine {
            definitions: BTreeMap::new(),
            effects: BTreeMap::new(),
        }
    }

    pub fn register_effect(&mut self, id: &str, effect: impl Effect<C> + 'static) {
        self.effects.insert(id.to_string(), Box::new(effect));
    }

    /// Effects must be registered before the definitions that use them.
    pub fn register(&mut self, def: FlowDefinition) -> Result<(), DefinitionError> {
        def.validate()?;
        if let Some(missing) = def.effect_ids().into_iter().find(|e| !self.effects.contains_key(*e)) {
            return Err(DefinitionError {
                flow_type: def.flow_type.clone(),
                message: format!("effect {missing} is not registered"),
            });
        }
        self.definitions.insert(def.flow_type.clone(), def);
        Ok(())
    }

    pub fn definition(&self, flow_type: &str) -> Option<&FlowDefinition> {
        self.definitions.get(flow_type)
    }

    pub fn flow_types(&self) -> impl Iterator<Item = &str> {
        self.definitions.keys().map(String::as_str)
    }

    fn def_of(&self, instance: &FlowInstance) -> &FlowDefinition {
        self.definitions
            .get(&instance.flow_type)
            .expect("instances only exist for registered flow types")
    }

    fn run_effect(
        &self,
        id: &str,
        ctx: &mut C,
        session: &SessionState,
        instance: &FlowInstance,
    ) -> Result<EffectOutput, EffectFailure> {
        let effect = self.effects.get(id).expect("validated at registration");
        effect.run(
            ctx,
            &EffectCall {
                instance,
                turn_index: session.turn_index,
                authenticated_user_id: session.authenticated_user_id.as_deref(),
            },
        )
    }

    /// Another unpaused instance with the same type and key value.
    fn duplicate_of<'a>(
        &self,
        session: &'a SessionState,
        def: &FlowDefinition,
        params: &Map<String, Value>,
        except: Option<&str>,
    ) -> Option<&'a FlowInstance> {
        let key = def.key_param.as_ref()?;
        let value = params.get(key)?;
        session.active_flows.iter().find(|f| {
            f.flow_type == def.flow_type
                && !f.paused
                && Some(f.instance_id.as_str()) != except
                && f.params.get(key) == Some(value)
        })
    }

    /// `flow = FLOW_TYPE(params)`. Keys naming slots are accepted and applied
    /// as initial slot values. The constructor effect runs before the
    /// instance is added; on failure the session is unchanged.
    pub fn instantiate(
        &self,
        session: &mut SessionState,
        ctx: &mut C,
        flow_type: &str,
        params: &Map<String, Value>,
    ) -> Result<Constructed, FlowError> {
        let def = self
            .definitions
            .get(flow_type)
            .ok_or_else(|| FlowError::UnknownFlowType(flow_type.to_string()))?;
        let mut own_params = Map::new();
        let mut slots = Map::new();
        for spec in &def.params {
            let value = params
                .get(&spec.name)
                .ok_or_else(|| FlowError::MissingParam(spec.name.clone()))?;
            if !spec.value_type.accepts(value) {
                return Err(FlowError::TypeMismatch {
                    name: spec.name.clone(),
                    expected: spec.value_type.name().to_string(),
                });
            }
            own_params.insert(spec.name.clone(), value.clone());
        }
        for (key, value) in params {
            if own_params.contains_key(key) {
                continue;
            }
            let slot = def
                .slots
                .get(key)
                .ok_or_else(|| FlowError::UnknownParam(key.clone()))?;
            if !slot.value_type.accepts(value) {
                return Err(FlowError::TypeMismatch {
                    name: key.clone(),
                    expected: slot.value_type.name().to_string(),
                });
            }
            slots.insert(key.clone(), value.clone());
        }
        if let Some(existing) = self.duplicate_of(session, def, &own_params, None) {
            return Err(FlowError::DuplicateFlow(existing.instance_id.clone()));
        }
        let seq = session.next_seq;
        let mut instance = FlowInstance {
            instance_id: format!("flow_{}", seq + 1),
            flow_type: def.flow_type.clone(),
            state: def.initial.clone(),
            params: own_params,
            slots,
            internals: Map::new(),
            paused: false,
            created_turn: session.turn_index,
            seq,
        };
        let mut effect_output = None;
        if let Some(step) = &def.constructor {
            let out = self
                .run_effect(&step.effect, ctx, session, &instance)
                .map_err(|f| FlowError::ConstructorEffectFailed {
                    message: f.message,
                    detail: f.detail,
                })?;
            instance.internals.extend(out.internals);
            instance.state = step.then.clone();
            effect_output = Some(out.output);
        }
        session.next_seq += 1;
        let flow_info = self.render(&instance);
        let instance_id = instance.instance_id.clone();
        session.active_flows.push(instance);
        Ok(Constructed {
            instance_id,
            effect_output,
            flow_info,
        })
    }

    /// `flow.setSlots(dict)`: merges values, state unchanged.
    pub fn set_slots(
        &self,
        session: &mut SessionState,
        instance_id: &str,
        values: &Map<String, Value>,
    ) -> Result<FlowInfo, FlowError> {
        let instance = session
            .flow(instance_id)
            .ok_or_else(|| FlowError::UnknownInstance(instance_id.to_string()))?;
        let def = self.def_of(instance);
        for (key, value) in values {
            let spec = def
                .slots
                .get(key)
                .ok_or_else(|| FlowError::UnknownSlot(key.clone()))?;
            if !spec.value_type.accepts(value) {
                return Err(FlowError::TypeMismatch {
                    name: key.clone(),
                    expected: spec.value_type.name().to_string(),
                });
            }
        }
        let instance = session.flow_mut(instance_id).expect("checked above");
        for (key, value) in values {
            instance.slots.insert(key.clone(), value.clone());
        }
        Ok(self.render(instance))
    }

    fn select_edge<'d>(
        &self,
        def: &'d FlowDefinition,
        session: &SessionState,
        instance: &FlowInstance,
        input: &Map<String, Value>,
    ) -> Result<&'d Transition, FlowError> {
        let incompatible = |reason: String| FlowError::IncompatibleInput {
            state: instance.state.clone(),
            reason,
        };
        let keys: Vec<&String> = input.keys().collect();
        let same_keys: Vec<&Transition> = def
            .transitions
            .iter()
            .filter(|t| t.from == instance.state)
            .filter(|t| t.inputs.keys().collect::<Vec<_>>() == keys)
            .collect();
        if same_keys.is_empty() {
            let keys: Vec<&str> = keys.iter().map(|k| k.as_str()).collect();
            return Err(incompatible(format!(
                "no transition from {} accepts input keys [{}]",
                instance.state,
                keys.join(", ")
            )));
        }
        let value_ok: Vec<&Transition> = same_keys
            .into_iter()
            .filter(|t| {
                t.inputs
                    .iter()
                    .all(|(k, p)| input.get(k).is_some_and(|v| p.matches(v)))
            })
            .collect();
        if value_ok.is_empty() {
            return Err(incompatible("input values do not match any transition".into()));
        }
        let mut missing_reason = None;
        for t in value_ok {
            let missing: Vec<&str> = t
                .required_slots
                .iter()
                .filter(|s| !slot_filled(instance, s))
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                missing_reason = Some(format!("required slots not filled: {}", missing.join(", ")));
                continue;
            }
            if t.requires_later_turn && session.turn_index <= instance.created_turn {
                missing_reason = Some(
                    "the user must reply to the flow's message before this transition".into(),
                );
                continue;
            }
            return Ok(t);
        }
        Err(incompatible(missing_reason.unwrap_or_default()))
    }

    /// `flow.next(user_input)`: follows exactly one edge and runs its effect
    /// once. Terminal instances are removed from the session immediately.
    pub fn next(
        &self,
        session: &mut SessionState,
        ctx: &mut C,
        instance_id: &str,
        input: &Map<String, Value>,
    ) -> Result<TransitionResult, FlowError> {
        let instance = session
            .flow(instance_id)
            .ok_or_else(|| FlowError::UnknownInstance(instance_id.to_string()))?;
        if instance.paused {
            return Err(FlowError::FlowPaused(instance_id.to_string()));
        }
        let def = self.def_of(instance);
        let edge = self.select_edge(def, session, instance, input)?;
        let mut effect_output = None;
        let mut internals = Map::new();
        if let Some(effect) = &edge.effect {
            let out = self
                .run_effect(effect, ctx, session, instance)
                .map_err(|f| FlowError::EffectFailed {
                    message: f.message,
                    detail: f.detail,
                })?;
            internals = out.internals;
            effect_output = Some(out.output);
        }
        let instance = session.flow_mut(instance_id).expect("checked above");
        let from_state = std::mem::replace(&mut instance.state, edge.to.clone());
        instance.internals.extend(internals);
        if edge.pause {
            instance.paused = true;
        }
        let flow_info = self.render(instance);
        let mut resumed = Vec::new();
        if def.is_terminal(&edge.to) {
            let finished = self.remove(session, instance_id);
            resumed = self.auto_resume(session, &finished);
        }
        Ok(TransitionResult {
            instance_id: instance_id.to_string(),
            from_state,
            new_state: edge.to.clone(),
            effect: edge.effect.clone(),
            effect_output,
            flow_info,
            resumed,
        })
    }

    pub fn pause(&self, session: &mut SessionState, instance_id: &str) -> Result<FlowInfo, FlowError> {
        let instance = session
            .flow_mut(instance_id)
            .ok_or_else(|| FlowError::UnknownInstance(instance_id.to_string()))?;
        instance.paused = true;
        Ok(self.render(instance))
    }

    pub fn resume(&self, session: &mut SessionState, instance_id: &str) -> Result<FlowInfo, FlowError> {
        let instance = session
            .flow(instance_id)
            .ok_or_else(|| FlowError::UnknownInstance(instance_id.to_string()))?;
        if !instance.paused {
            return Err(FlowError::NotPaused(instance_id.to_string()));
        }
        if let Some(blocker) = self.resume_blocker(session, instance) {
            return Err(FlowError::ResumeBlocked {
                instance_id: instance_id.to_string(),
                blocked_by: blocker,
            });
        }
        let def = self.def_of(instance);
        if let Some(existing) = self.duplicate_of(session, def, &instance.params, Some(instance_id)) {
            return Err(FlowError::DuplicateFlow(existing.instance_id.clone()));
        }
        let instance = session.flow_mut(instance_id).expect("checked above");
        instance.paused = false;
        Ok(self.render(instance))
    }

    fn resume_blocker(&self, session: &SessionState, instance: &FlowInstance) -> Option<String> {
        let guard = self.def_of(instance).resume_guard.as_ref()?;
        let value = instance.params.get(&guard.shared_param)?;
        session
            .active_flows
            .iter()
            .find(|f| {
                f.flow_type == guard.blocking_flow_type
                    && f.params.get(&guard.shared_param) == Some(value)
            })
            .map(|f| f.instance_id.clone())
    }

    /// Resumes paused instances whose resume guard was waiting on `finished`.
    fn auto_resume(&self, session: &mut SessionState, finished: &FlowInstance) -> Vec<String> {
        let candidates: Vec<String> = session
            .active_flows
            .iter()
            .filter(|f| f.paused)
            .filter(|f| {
                self.def_of(f).resume_guard.as_ref().is_some_and(|g| {
                    g.blocking_flow_type == finished.flow_type
                        && f.params.get(&g.shared_param).is_some()
                        && f.params.get(&g.shared_param) == finished.params.get(&g.shared_param)
                })
            })
            .map(|f| f.instance_id.clone())
            .collect();
        candidates
            .into_iter()
            .filter(|id| self.resume(session, id).is_ok())
            .collect()
    }

    fn remove(&self, session: &mut SessionState, instance_id: &str) -> FlowInstance {
        let idx = session
            .active_flows
            .iter()
            .position(|f| f.instance_id == instance_id)
            .expect("instance exists");
        session.active_flows.remove(idx)
    }

    /// Drops an instance without running any effect.
    pub fn cancel(&self, session: &mut SessionState, instance_id: &str) -> Result<Vec<String>, FlowError> {
        if session.flow(instance_id).is_none() {
            return Err(FlowError::UnknownInstance(instance_id.to_string()));
        }
        let finished = self.remove(session, instance_id);
        Ok(self.auto_resume(session, &finished))
    }

    pub fn flow_info(&self, session: &SessionState, instance_id: &str) -> Result<FlowInfo, FlowError> {
        session
            .flow(instance_id)
            .map(|f| self.render(f))
            .ok_or_else(|| FlowError::UnknownInstance(instance_id.to_string()))
    }

    /// One [`FlowInfo`] per active instance, in instantiation order.
    pub fn render_flow_infos(&self, session: &SessionState) -> Vec<FlowInfo> {
        let mut flows: Vec<&FlowInstance> = session.active_flows.iter().collect();
        flows.sort_by_key(|f| f.seq);
        flows.into_iter().map(|f| self.render(f)).collect()
    }

    pub fn render(&self, instance: &FlowInstance) -> FlowInfo {
        let def = self.def_of(instance);
        let view = def.views.get(&instance.state).cloned().unwrap_or_default();
        let lookup = |name: &str| instance.lookup(name).map(render_value);
        let state_instructions = render_template(&view.instructions, lookup);
        let instructions = if instance.paused {
            format!(
                "{} {}",
                render_template(&def.paused_hint, lookup),
                state_instructions
            )
        } else {
            state_instructions
        };
        let suggested_message = if instance.paused {
            None
        } else {
            view.suggested_message
                .as_deref()
                .map(|t| render_template(t, lookup))
        };
        let suggestion_id = suggested_message
            .as_ref()
            .map(|_| format!("{}@{}", instance.instance_id, instance.state));
        let missing_slots = def
            .slots
            .iter()
            .filter(|(name, spec)| spec.required && !slot_filled(instance, name))
            .map(|(name, _)| name.clone())
            .collect();
        let expected_inputs = if instance.paused {
            Vec::new()
        } else {
            let mut out: Vec<ExpectedInput> = Vec::new();
            for t in def.transitions_from(&instance.state) {
                let e = ExpectedInput {
                    input: t
                        .inputs
                        .iter()
                        .map(|(k, p)| (k.clone(), p.describe()))
                        .collect(),
                    requires_slots: t.required_slots.clone(),
                };
                if !out.contains(&e) {
                    out.push(e);
                }
            }
            out
        };
        FlowInfo {
            instance_id: instance.instance_id.clone(),
            flow_type: instance.flow_type.clone(),
            state: instance.state.clone(),
            paused: instance.paused,
            terminal: def.is_terminal(&instance.state),
            filled_slots: instance.slots.clone(),
            missing_slots,
            instructions,
            suggested_message,
            suggestion_id,
            expected_inputs,
        }
    }
}

fn slot_filled(instance: &FlowInstance, name: &str) -> bool {
    match instance.slots.get(name) {
        None | Some(Value::Null) => false,
        Some(Value::String(s)) => !s.trim().is_empty(),
        Some(_) => true,
    }
}
