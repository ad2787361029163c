//! Retail business processes as flows.
//!
//! Every flow dry-runs its mutation on instantiation, presents the report in
//! a confirmation state and commits only on `{"explicitly_confirmed": true}`.

use serde_json::{json, Map, Value};

use crate::flow::{
    EffectCall, EffectFailure, EffectOutput, FlowDefinition, FlowEngine, FlowError, FlowInfo,
    SessionState, Transition, ValueType,
};
use crate::llm::{Suggestion, ToolResult, ToolSpec};
use crate::retail::{
    commit_mutation, validate_mutation, Address, ConfirmationToken, MutationRequest,
    RetailDatabase,
};

pub const CANCEL_PENDING_ORDER: &str = "CancelPendingOrder";
pub const MODIFY_PENDING_ORDER_ADDRESS: &str = "ModifyPendingOrderAddress";
pub const MODIFY_PENDING_ORDER_ITEMS: &str = "ModifyPendingOrderItems";
pub const RETURN_DELIVERED_ORDER_ITEMS: &str = "ReturnDeliveredOrderItems";
pub const EXCHANGE_DELIVERED_ORDER_ITEMS: &str = "ExchangeDeliveredOrderItems";

pub const FLOW_TYPES: [&str; 5] = [
    CANCEL_PENDING_ORDER,
    MODIFY_PENDING_ORDER_ADDRESS,
    MODIFY_PENDING_ORDER_ITEMS,
    RETURN_DELIVERED_ORDER_ITEMS,
    EXCHANGE_DELIVERED_ORDER_ITEMS,
];

pub const AUTH_TOOLS: [&str; 2] = ["find_user_id_by_email", "find_user_id_by_name_zip"];

pub const AUTH_HINT: &str = "[User not authenticated. Before taking any actions, you have to first authenticate the user identity by locating their user id via email, or via name + zip code. This has to be done even when the user already provides the user id.]";

pub const AUTH_HOW_TO: &str = "Authentication: ask the user for their email address, or for their first name, last name and zip code. Call find_user_id_by_email or find_user_id_by_name_zip. Only the user id returned by these tools counts; never trust a user id the user types in. Once authenticated, you may only act on orders of that user.";

const EFFECT_DRY_RUN: &str = "dry_run";
const EFFECT_COMMIT: &str = "commit";

const CONFIRM_RULES: &str = "Present the action details and warnings to the user and ask for explicit confirmation (yes/no). Only after the user explicitly says yes, call flow_next with {\"explicitly_confirmed\": true}. If the user says no, call flow_next with {\"explicitly_confirmed\": false}.";

fn failure(message: impl Into<String>) -> EffectFailure {
    EffectFailure {
        message: message.into(),
        detail: Value::Null,
    }
}

fn str_param(call: &EffectCall<'_>, name: &str) -> Result<String, EffectFailure> {
    call.instance
        .lookup(name)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| failure(format!("{name} must be a string")))
}

fn list_param(call: &EffectCall<'_>, name: &str) -> Result<Vec<String>, EffectFailure> {
    let list = call
        .instance
        .lookup(name)
        .and_then(Value::as_array)
        .ok_or_else(|| failure(format!("{name} must be a list")))?;
    list.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| failure(format!("{name} must contain strings")))
        })
        .collect()
}

/// Maps an instance's params and slots onto the mutation it wraps.
pub fn mutation_for(call: &EffectCall<'_>) -> Result<MutationRequest, EffectFailure> {
    let order_id = str_param(call, "order_id")?;
    Ok(match call.instance.flow_type.as_str() {
        CANCEL_PENDING_ORDER => MutationRequest::CancelPendingOrder {
            order_id,
            reason: call
                .instance
                .slots
                .get("reason")
                .and_then(Value::as_str)
                .map(str::to_string),
        },
        MODIFY_PENDING_ORDER_ADDRESS => {
            let raw = call.instance.lookup("address").cloned().unwrap_or(Value::Null);
            let address: Address = serde_json::from_value(raw)
                .map_err(|e| failure(format!("address is malformed: {e}")))?;
            MutationRequest::ModifyPendingOrderAddress { order_id, address }
        }
        MODIFY_PENDING_ORDER_ITEMS => MutationRequest::ModifyPendingOrderItems {
            order_id,
            item_ids: list_param(call, "item_ids")?,
            new_item_ids: list_param(call, "new_item_ids")?,
            payment_method_id: str_param(call, "payment_method_id")?,
        },
        RETURN_DELIVERED_ORDER_ITEMS => MutationRequest::ReturnDeliveredOrderItems {
            order_id,
            item_ids: list_param(call, "item_ids")?,
            payment_method_id: str_param(call, "payment_method_id")?,
        },
        EXCHANGE_DELIVERED_ORDER_ITEMS => MutationRequest::ExchangeDeliveredOrderItems {
            order_id,
            item_ids: list_param(call, "item_ids")?,
            new_item_ids: list_param(call, "new_item_ids")?,
            payment_method_id: str_param(call, "payment_method_id")?,
        },
        other => return Err(failure(format!("no mutation for flow type {other}"))),
    })
}

fn check_owner(db: &RetailDatabase, call: &EffectCall<'_>, order_id: &str) -> Result<(), EffectFailure> {
    let Some(user) = call.authenticated_user_id else {
        return Err(failure("the user is not authenticated"));
    };
    match db.orders.get(order_id) {
        Some(order) if order.user_id != user => Err(failure(format!(
            "order {order_id} does not belong to the authenticated user"
        ))),
        _ => Ok(()),
    }
}

fn dry_run(db: &mut RetailDatabase, call: &EffectCall<'_>) -> Result<EffectOutput, EffectFailure> {
    let request = mutation_for(call)?;
    check_owner(db, call, request.order_id())?;
    let report = validate_mutation(db, &request);
    let detail = serde_json::to_value(&report).expect("report serializes");
    if !report.valid {
        return Err(EffectFailure {
            message: report.text(),
            detail,
        });
    }
    let mut internals = Map::new();
    internals.insert("report".into(), json!(report.text()));
    if let Some(delta) = report.price_delta {
        internals.insert("price_delta".into(), json!(delta.to_string()));
    }
    Ok(EffectOutput {
        internals,
        output: detail,
    })
}

fn commit(db: &mut RetailDatabase, call: &EffectCall<'_>) -> Result<EffectOutput, EffectFailure> {
    let request = mutation_for(call)?;
    check_owner(db, call, request.order_id())?;
    let token = ConfirmationToken::issue(&call.instance.instance_id, &request, call.turn_index);
    let receipt = commit_mutation(db, &request, token).map_err(|e| failure(e.to_string()))?;
    let mut internals = Map::new();
    internals.insert("receipt".into(), json!(receipt.text()));
    Ok(EffectOutput {
        internals,
        output: serde_json::to_value(&receipt).expect("receipt serializes"),
    })
}

fn confirm_edges(from: &str, confirmed: &str, abandoned: &str, required: &[&str]) -> [Transition; 2] {
    let mut yes = Transition::on(from, confirmed)
        .when_eq("explicitly_confirmed", json!(true))
        .effect(EFFECT_COMMIT)
        .after_user_reply();
    for slot in required {
        yes = yes.requires(slot);
    }
    let no = Transition::on(from, abandoned).when_eq("explicitly_confirmed", json!(false));
    [yes, no]
}

const CONFIRMED_TEXT: &str = "The action was carried out:\n{receipt}\nSummarize the result to the user.";
const ABANDONED_TEXT: &str = "The user declined; nothing was changed. If the user wants a different action, start a new flow.";

pub fn define_cancel_pending_order() -> FlowDefinition {
    let [yes, no] = confirm_edges(
        "AWAITING_REASON_AND_CONFIRMATION",
        "CONFIRMED",
        "ABANDONED",
        &["reason"],
    );
    FlowDefinition::builder(CANCEL_PENDING_ORDER, "INIT")
        .description("Cancel an entire pending order. Params: order_id. Slot: reason.")
        .param("order_id", ValueType::String)
        .key_param("order_id")
        .slot("reason", ValueType::String, true)
        .constructor(EFFECT_DRY_RUN, "AWAITING_REASON_AND_CONFIRMATION")
        .state("INIT", "Validating the cancellation.", None)
        .state(
            "AWAITING_REASON_AND_CONFIRMATION",
            &format!("If the cancellation reason is unknown, ask the user for it ('no longer needed' or 'ordered by mistake') and record it with flow_set_slots {{\"reason\": ...}}. {CONFIRM_RULES}"),
            Some("I can cancel order {order_id} for you. Details:\n{report}\nCancellation reason: {reason}\nDo you confirm that you want to cancel this order (yes/no)?"),
        )
        .terminal("CONFIRMED", CONFIRMED_TEXT)
        .terminal("ABANDONED", ABANDONED_TEXT)
        .transition(yes)
        .transition(no)
        .build()
}

fn simple_confirm_flow(flow_type: &str, description: &str, suggested: &str) -> crate::flow::FlowBuilder {
    let [yes, no] = confirm_edges("AWAITING_CONFIRMATION", "CONFIRMED", "ABANDONED", &[]);
    FlowDefinition::builder(flow_type, "INIT")
        .description(description)
        .key_param("order_id")
        .constructor(EFFECT_DRY_RUN, "AWAITING_CONFIRMATION")
        .state("INIT", "Validating the request.", None)
        .state("AWAITING_CONFIRMATION", CONFIRM_RULES, Some(suggested))
        .terminal("CONFIRMED", CONFIRMED_TEXT)
        .terminal("ABANDONED", ABANDONED_TEXT)
        .transition(yes)
        .transition(no)
}

pub fn define_modify_pending_order_address() -> FlowDefinition {
    simple_confirm_flow(
        MODIFY_PENDING_ORDER_ADDRESS,
        "Change the shipping address of a pending order. Params: order_id, address {address1, address2, city, state, country, zip}.",
        "I am ready to update the shipping address of order {order_id}. Details:\n{report}\nDo you confirm this change (yes/no)?",
    )
    .param("order_id", ValueType::String)
    .param("address", ValueType::Object)
    .build()
}

pub fn define_return_delivered_order_items() -> FlowDefinition {
    simple_confirm_flow(
        RETURN_DELIVERED_ORDER_ITEMS,
        "Return items of a delivered order. Params: order_id, item_ids, payment_method_id (refund destination).",
        "I am ready to return these items from order {order_id}: {item_ids}. Details:\n{report}\nThe refund will go to {payment_method_id}. Do you confirm the return (yes/no)?",
    )
    .param("order_id", ValueType::String)
    .param("item_ids", ValueType::StringList)
    .param("payment_method_id", ValueType::String)
    .build()
}

pub fn define_exchange_delivered_order_items() -> FlowDefinition {
    simple_confirm_flow(
        EXCHANGE_DELIVERED_ORDER_ITEMS,
        "Exchange items of a delivered order for other variants of the same products. Params: order_id, item_ids, new_item_ids (same order), payment_method_id.",
        "I am ready to exchange items of order {order_id}. Details:\n{report}\nAny price difference is settled with {payment_method_id}. Do you confirm the exchange (yes/no)?",
    )
    .param("order_id", ValueType::String)
    .param("item_ids", ValueType::StringList)
    .param("new_item_ids", ValueType::StringList)
    .param("payment_method_id", ValueType::String)
    .build()
}

pub fn define_modify_pending_order_items() -> FlowDefinition {
    let [yes, no] = confirm_edges("AWAITING_CONFIRMATION", "CONFIRMED", "ABANDONED", &[]);
    FlowDefinition::builder(MODIFY_PENDING_ORDER_ITEMS, "INIT")
        .description("Swap items of a pending order for other variants of the same products. Params: order_id, item_ids, new_item_ids (same order), payment_method_id.")
        .param("order_id", ValueType::String)
        .param("item_ids", ValueType::StringList)
        .param("new_item_ids", ValueType::StringList)
        .param("payment_method_id", ValueType::String)
        .key_param("order_id")
        .constructor(EFFECT_DRY_RUN, "ADDRESS_CHECK")
        .state("INIT", "Validating the item modification.", None)
        .state(
            "ADDRESS_CHECK",
            "Explain to the user the rule that a shipping address change must happen before the item modification, and ask whether they have any changes to the shipping address. Also present the item changes and ask for confirmation. If the user needs an address change, call flow_next with {\"needs_address_change\": true}, which pauses this flow, then start a ModifyPendingOrderAddress flow. Otherwise call flow_next with {\"needs_address_change\": false}.",
            Some("Here are the item changes for order {order_id}:\n{report}\nPlease note: if the shipping address of this order also needs to change, that has to be done before the items are modified. Do you need any change to the shipping address? If not, do you confirm the item modification (yes/no)?"),
        )
        .state(
            "AWAITING_CONFIRMATION",
            CONFIRM_RULES,
            Some("Here are the item changes for order {order_id}:\n{report}\nDo you confirm the item modification (yes/no)?"),
        )
        .terminal("CONFIRMED", CONFIRMED_TEXT)
        .terminal("ABANDONED", ABANDONED_TEXT)
        .transition(
            Transition::on("ADDRESS_CHECK", "AWAITING_CONFIRMATION")
                .when_eq("needs_address_change", json!(true))
                .pausing(),
        )
        .transition(
            Transition::on("ADDRESS_CHECK", "AWAITING_CONFIRMATION")
                .when_eq("needs_address_change", json!(false)),
        )
        .transition(yes)
        .transition(no)
        .paused_hint("Paused until the ModifyPendingOrderAddress flow for order {order_id} completes. Start that flow with start_flow if it is not running; this flow resumes automatically when it finishes.")
        .resume_guard(MODIFY_PENDING_ORDER_ADDRESS, "order_id")
        .build()
}

/// Flow engine with the dry-run/commit effects and all five retail flows.
pub fn retail_flow_engine() -> FlowEngine<RetailDatabase> {
    let mut engine = FlowEngine::new();
    engine.register_effect(EFFECT_DRY_RUN, dry_run);
    engine.register_effect(EFFECT_COMMIT, commit);
    for def in [
        define_cancel_pending_order(),
        define_modify_pending_order_address(),
        define_modify_pending_order_items(),
        define_return_delivered_order_items(),
        define_exchange_delivered_order_items(),
    ] {
        engine.register(def).expect("retail flow definitions are valid");
    }
    engine
}

/// Tool list and instructions visible in the current authentication state.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedTools {
    pub tools: Vec<ToolSpec>,
    /// Authentication hint and how-to, present only before authentication.
    pub auth_instructions: Option<String>,
}

pub fn gate_tools_by_auth(session: &SessionState, all_tool_specs: &[ToolSpec]) -> GatedTools {
    if session.authenticated_user_id.is_some() {
        return GatedTools {
            tools: all_tool_specs.to_vec(),
            auth_instructions: None,
        };
    }
    GatedTools {
        tools: all_tool_specs
            .iter()
            .filter(|t| AUTH_TOOLS.contains(&t.name.as_str()))
            .cloned()
            .collect(),
        auth_instructions: Some(format!("{AUTH_HINT}\n{AUTH_HOW_TO}")),
    }
}

fn flow_result(info: &FlowInfo, header: String) -> (String, Vec<Suggestion>) {
    let mut text = header;
    text.push('\n');
    text.push_str(&info.render_body());
    let mut suggestions = Vec::new();
    if let (Some(id), Some(s)) = (&info.suggestion_id, info.render_suggestion()) {
        suggestions.push(Suggestion {
            id: id.clone(),
            text: s,
        });
    }
    (text, suggestions)
}

fn with_resumed(
    engine: &FlowEngine<RetailDatabase>,
    session: &SessionState,
    resumed: &[String],
    mut text: String,
    mut suggestions: Vec<Suggestion>,
) -> ToolResult {
    for id in resumed {
        if let Ok(info) = engine.flow_info(session, id) {
            let (t, s) = flow_result(&info, format!("resumed {id}"));
            text.push('\n');
            text.push_str(&t);
            suggestions.extend(s);
        }
    }
    ToolResult::Ok { text, suggestions }
}

fn flow_error(e: FlowError) -> ToolResult {
    ToolResult::err(e.to_string())
}

fn arg_str<'a>(args: &'a Map<String, Value>, name: &str) -> Result<&'a str, ToolResult> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolResult::err(format!("argument {name} must be a string")))
}

fn arg_obj(args: &Map<String, Value>, name: &str) -> Result<Map<String, Value>, ToolResult> {
    match args.get(name) {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m.clone()),
        Some(_) => Err(ToolResult::err(format!("argument {name} must be an object"))),
    }
}

/// `start_flow(flow_type, params)`.
pub fn start_flow(
    engine: &FlowEngine<RetailDatabase>,
    session: &mut SessionState,
    db: &mut RetailDatabase,
    args: &Map<String, Value>,
) -> ToolResult {
    let mut run = || -> Result<ToolResult, ToolResult> {
        let flow_type = arg_str(args, "flow_type")?;
        let params = arg_obj(args, "params")?;
        let c = engine
            .instantiate(session, db, flow_type, &params)
            .map_err(flow_error)?;
        let (text, suggestions) = flow_result(&c.flow_info, format!("started {}", c.instance_id));
        Ok(ToolResult::Ok { text, suggestions })
    };
    run().unwrap_or_else(|e| e)
}

/// `flow_set_slots(instance_id, slots)`.
pub fn flow_set_slots(
    engine: &FlowEngine<RetailDatabase>,
    session: &mut SessionState,
    args: &Map<String, Value>,
) -> ToolResult {
    let mut run = || -> Result<ToolResult, ToolResult> {
        let id = arg_str(args, "instance_id")?;
        let slots = arg_obj(args, "slots")?;
        let info = engine.set_slots(session, id, &slots).map_err(flow_error)?;
        let (text, suggestions) = flow_result(&info, format!("updated {id}"));
        Ok(ToolResult::Ok { text, suggestions })
    };
    run().unwrap_or_else(|e| e)
}

/// `flow_next(instance_id, input)`.
pub fn flow_next(
    engine: &FlowEngine<RetailDatabase>,
    session: &mut SessionState,
    db: &mut RetailDatabase,
    args: &Map<String, Value>,
) -> ToolResult {
    let mut run = || -> Result<ToolResult, ToolResult> {
        let id = arg_str(args, "instance_id")?;
        let input = arg_obj(args, "input")?;
        let r = engine.next(session, db, id, &input).map_err(flow_error)?;
        let mut header = format!("{id}: {} -> {}", r.from_state, r.new_state);
        if r.flow_info.terminal {
            header.push_str(" (finished)");
        }
        let (text, suggestions) = flow_result(&r.flow_info, header);
        Ok(with_resumed(engine, session, &r.resumed, text, suggestions))
    };
    run().unwrap_or_else(|e| e)
}

/// `flow_cancel(instance_id)`: drops the flow without side effects.
pub fn flow_cancel(
    engine: &FlowEngine<RetailDatabase>,
    session: &mut SessionState,
    args: &Map<String, Value>,
) -> ToolResult {
    let mut run = || -> Result<ToolResult, ToolResult> {
        let id = arg_str(args, "instance_id")?;
        let resumed = engine.cancel(session, id).map_err(flow_error)?;
        Ok(with_resumed(engine, session, &resumed, format!("cancelled {id}"), Vec::new()))
    };
    run().unwrap_or_else(|e| e)
}

pub const FLOW_TOOLS: [&str; 4] = ["start_flow", "flow_set_slots", "flow_next", "flow_cancel"];

pub fn flow_tool_specs() -> Vec<ToolSpec> {
    let types: Vec<Value> = FLOW_TYPES.iter().map(|t| json!(t)).collect();
    vec![
        ToolSpec::new(
            "start_flow",
            "Start a business process for the authenticated user. Runs a dry-run and returns the flow's state, instructions and a suggested message. Flow types: CancelPendingOrder {order_id, reason?}; ModifyPendingOrderAddress {order_id, address}; ModifyPendingOrderItems {order_id, item_ids, new_item_ids, payment_method_id}; ReturnDeliveredOrderItems {order_id, item_ids, payment_method_id}; ExchangeDeliveredOrderItems {order_id, item_ids, new_item_ids, payment_method_id}.",
            json!({
                "type": "object",
                "properties": {
                    "flow_type": {"type": "string", "enum": types},
                    "params": {"type": "object"}
                },
                "required": ["flow_type", "params"]
            }),
        ),
        ToolSpec::new(
            "flow_set_slots",
            "Record information collected from the user in a flow's slots.",
            json!({
                "type": "object",
                "properties": {
                    "instance_id": {"type": "string"},
                    "slots": {"type": "object"}
                },
                "required": ["instance_id", "slots"]
            }),
        ),
        ToolSpec::new(
            "flow_next",
            "Advance a flow with one of the expected inputs listed in its flow info.",
            json!({
                "type": "object",
                "properties": {
                    "instance_id": {"type": "string"},
                    "input": {"type": "object"}
                },
                "required": ["instance_id", "input"]
            }),
        ),
        ToolSpec::new(
            "flow_cancel",
            "Abandon a flow without changing anything.",
            json!({
                "type": "object",
                "properties": {"instance_id": {"type": "string"}},
                "required": ["instance_id"]
            }),
        ),
    ]
}
