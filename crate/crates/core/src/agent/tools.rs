//! Tool registry: simple reads, LLM-powered search, flow tools, and the
//! direct mutation tools of the baseline configuration.

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::AblationConfig;
use crate::flow::{FlowEngine, SessionState};
use crate::llm::{ChatModel, ScriptKey, ToolCall, ToolResult, ToolSpec};
use crate::query::{find_product_items, query_orders};
use crate::retail::{
    commit_unconfirmed, validate_mutation, Address, MutationRequest, RetailDatabase, UserLookup,
};
use crate::retail_flows::{
    flow_cancel, flow_next, flow_set_slots, flow_tool_specs, gate_tools_by_auth, start_flow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolKind {
    Simple,
    LlmPowered,
    Flow,
    DirectMutation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredTool {
    pub spec: ToolSpec,
    pub kind: ToolKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolRegistry {
    pub tools: Vec<RegisteredTool>,
    pub optimized_read_tools: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("tool {0} is not available until the user is authenticated")]
    HiddenTool(String),
}

/// Everything a tool may read or change.
pub struct ToolContext<'a> {
    pub db: &'a mut RetailDatabase,
    pub session: &'a mut SessionState,
    pub engine: &'a FlowEngine<RetailDatabase>,
    pub tool_llm: &'a mut dyn ChatModel,
    pub key: ScriptKey,
}

fn object(props: Value, required: &[&str]) -> Value {
    json!({"type": "object", "properties": props, "required": required})
}

fn string() -> Value {
    json!({"type": "string"})
}

fn strings() -> Value {
    json!({"type": "array", "items": {"type": "string"}})
}

fn simple_specs() -> Vec<ToolSpec> {
    vec![
        ToolSpec::new(
            "find_user_id_by_email",
            "Find a user id by email address.",
            object(json!({"email": string()}), &["email"]),
        ),
        ToolSpec::new(
            "find_user_id_by_name_zip",
            "Find a user id by first name, last name and zip code.",
            object(
                json!({"first_name": string(), "last_name": string(), "zip": string()}),
                &["first_name", "last_name", "zip"],
            ),
        ),
        ToolSpec::new(
            "get_user_details",
            "Get a user's profile, addresses and payment methods.",
            object(json!({"user_id": string()}), &["user_id"]),
        ),
        ToolSpec::new(
            "get_order_details",
            "Get an order's status, items, prices and shipping address.",
            object(json!({"order_id": string()}), &["order_id"]),
        ),
        ToolSpec::new(
            "get_product_details",
            "Get a product and all of its items with attributes, prices and availability.",
            object(json!({"product_id": string()}), &["product_id"]),
        ),
        ToolSpec::new(
            "list_all_product_types",
            "List every product name with its product id.",
            object(json!({}), &[]),
        ),
    ]
}

fn llm_specs() -> Vec<ToolSpec> {
    vec![
        ToolSpec::new(
            "find_product_items",
            "Find the items of a product matching a requirement in plain English, which may refer to the user's past orders (e.g. \"most expensive, same size as before\").",
            object(
                json!({"product_id": string(), "requirement": string()}),
                &["product_id", "requirement"],
            ),
        ),
        ToolSpec::new(
            "query_orders",
            "Find the authenticated user's orders matching a requirement in plain English.",
            object(json!({"requirement": string()}), &["requirement"]),
        ),
    ]
}

fn direct_specs() -> Vec<ToolSpec> {
    let address = json!({
        "address1": string(), "address2": string(), "city": string(),
        "state": string(), "country": string(), "zip": string()
    });
    vec![
        ToolSpec::new(
            "cancel_pending_order",
            "Cancel a pending order. Reason is \"no longer needed\" or \"ordered by mistake\".",
            object(json!({"order_id": string(), "reason": string()}), &["order_id", "reason"]),
        ),
        ToolSpec::new(
            "modify_pending_order_address",
            "Change the shipping address of a pending order.",
            object(json!({"order_id": string(), "address": {"type": "object", "properties": address}}), &["order_id", "address"]),
        ),
        ToolSpec::new(
            "modify_pending_order_items",
            "Swap items of a pending order for other items of the same products.",
            object(
                json!({"order_id": string(), "item_ids": strings(), "new_item_ids": strings(), "payment_method_id": string()}),
                &["order_id", "item_ids", "new_item_ids", "payment_method_id"],
            ),
        ),
        ToolSpec::new(
            "return_delivered_order_items",
            "Return items of a delivered order; the refund goes to the payment method.",
            object(
                json!({"order_id": string(), "item_ids": strings(), "payment_method_id": string()}),
                &["order_id", "item_ids", "payment_method_id"],
            ),
        ),
        ToolSpec::new(
            "exchange_delivered_order_items",
            "Exchange items of a delivered order for other items of the same products.",
            object(
                json!({"order_id": string(), "item_ids": strings(), "new_item_ids": strings(), "payment_method_id": string()}),
                &["order_id", "item_ids", "new_item_ids", "payment_method_id"],
            ),
        ),
    ]
}

impl ToolRegistry {
    pub fn new(config: &AblationConfig) -> Self {
        let mut tools = Vec::new();
        let mut add = |specs: Vec<ToolSpec>, kind| {
            tools.extend(specs.into_iter().map(|spec| RegisteredTool { spec, kind }));
        };
        add(simple_specs(), ToolKind::Simple);
        if config.llm_powered_tools {
            add(llm_specs(), ToolKind::LlmPowered);
        }
        if config.smag {
            add(flow_tool_specs(), ToolKind::Flow);
        } else {
            add(direct_specs(), ToolKind::DirectMutation);
        }
        ToolRegistry {
            tools,
            optimized_read_tools: config.optimized_read_tools,
        }
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredTool> {
        self.tools.iter().find(|t| t.spec.name == name)
    }

    pub fn names_of(&self, kind: ToolKind) -> Vec<&str> {
        self.tools
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.spec.name.as_str())
            .collect()
    }
}

fn canonical<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .expect("tool output serializes")
        .to_string()
}

fn arg<'a>(args: &'a Map<String, Value>, name: &str) -> Result<&'a str, ToolResult> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolResult::err(format!("missing string argument {name}")))
}

fn arg_list(args: &Map<String, Value>, name: &str) -> Result<Vec<String>, ToolResult> {
    let list = args
        .get(name)
        .and_then(Value::as_array)
        .ok_or_else(|| ToolResult::err(format!("missing list argument {name}")))?;
    list.iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| ToolResult::err(format!("{name} must be a list of strings")))
}

fn render_lookup(lookup: &UserLookup) -> String {
    match &lookup.orders {
        None => lookup.user_id.clone(),
        Some(orders) if orders.is_empty() => format!("{}\norders: none", lookup.user_id),
        Some(orders) => format!("{}\norders:\n{}", lookup.user_id, orders.join("\n")),
    }
}

fn authenticate(ctx: &mut ToolContext<'_>, found: Result<UserLookup, crate::retail::RetailError>) -> ToolResult {
    match found {
        Ok(lookup) => {
            ctx.session.authenticated_user_id = Some(lookup.user_id.clone());
            ToolResult::ok(render_lookup(&lookup))
        }
        Err(e) => ToolResult::err(e.to_string()),
    }
}

fn current_user(ctx: &ToolContext<'_>) -> Result<String, ToolResult> {
    ctx.session
        .authenticated_user_id
        .clone()
        .ok_or_else(|| ToolResult::err("the user is not authenticated"))
}

fn direct_request(name: &str, args: &Map<String, Value>) -> Result<MutationRequest, ToolResult> {
    let order_id = arg(args, "order_id")?.to_string();
    Ok(match name {
        "cancel_pending_order" => MutationRequest::CancelPendingOrder {
            order_id,
            reason: Some(arg(args, "reason")?.to_string()),
        },
        "modify_pending_order_address" => {
            let raw = args.get("address").cloned().unwrap_or(Value::Null);
            let address: Address = serde_json::from_value(raw)
                .map_err(|e| ToolResult::err(format!("malformed address: {e}")))?;
            MutationRequest::ModifyPendingOrderAddress { order_id, address }
        }
        "modify_pending_order_items" => MutationRequest::ModifyPendingOrderItems {
            order_id,
            item_ids: arg_list(args, "item_ids")?,
            new_item_ids: arg_list(args, "new_item_ids")?,
            payment_method_id: arg(args, "payment_method_id")?.to_string(),
        },
        "return_delivered_order_items" => MutationRequest::ReturnDeliveredOrderItems {
            order_id,
            item_ids: arg_list(args, "item_ids")?,
            payment_method_id: arg(args, "payment_method_id")?.to_string(),
        },
        _ => MutationRequest::ExchangeDeliveredOrderItems {
            order_id,
            item_ids: arg_list(args, "item_ids")?,
            new_item_ids: arg_list(args, "new_item_ids")?,
            payment_method_id: arg(args, "payment_method_id")?.to_string(),
        },
    })
}

fn run_direct(ctx: &mut ToolContext<'_>, call: &ToolCall) -> Result<ToolResult, ToolResult> {
    let user = current_user(ctx)?;
    let req = direct_request(&call.name, &call.arguments)?;
    match ctx.db.orders.get(req.order_id()) {
        Some(o) if o.user_id != user => {
            return Err(ToolResult::err(format!(
                "order {} does not belong to the authenticated user",
                o.order_id
            )))
        }
        _ => {}
    }
    let report = validate_mutation(ctx.db, &req);
    if !report.is_committable() {
        return Err(ToolResult::err(report.text()));
    }
    let receipt = commit_unconfirmed(ctx.db, &req, &call.name).map_err(|e| ToolResult::err(e.to_string()))?;
    Ok(ToolResult::ok(receipt.text()))
}

fn run(registry: &ToolRegistry, ctx: &mut ToolContext<'_>, call: &ToolCall) -> Result<ToolResult, ToolResult> {
    let args = &call.arguments;
    let summary = registry.optimized_read_tools;
    Ok(match call.name.as_str() {
        "find_user_id_by_email" => {
            let found = ctx.db.find_user_id_by_email(arg(args, "email")?, summary);
            authenticate(ctx, found)
        }
        "find_user_id_by_name_zip" => {
            let found = ctx.db.find_user_id_by_name_zip(
                arg(args, "first_name")?,
                arg(args, "last_name")?,
                arg(args, "zip")?,
                summary,
            );
            authenticate(ctx, found)
        }
        "get_user_details" => match ctx.db.get_user_details(arg(args, "user_id")?) {
            Ok(u) => ToolResult::ok(canonical(u)),
            Err(e) => ToolResult::err(e.to_string()),
        },
        "get_order_details" => match ctx.db.get_order_details(arg(args, "order_id")?) {
            Ok(o) => ToolResult::ok(canonical(o)),
            Err(e) => ToolResult::err(e.to_string()),
        },
        "get_product_details" => match ctx.db.get_product_details(arg(args, "product_id")?) {
            Ok(p) => ToolResult::ok(canonical(p)),
            Err(e) => ToolResult::err(e.to_string()),
        },
        "list_all_product_types" => {
            let names: Map<String, Value> = ctx
                .db
                .products
                .values()
                .map(|p| (p.name.clone(), json!(p.product_id)))
                .collect();
            ToolResult::ok(Value::Object(names).to_string())
        }
        "find_product_items" => {
            let user = current_user(ctx)?;
            let found = find_product_items(
                ctx.db,
                ctx.tool_llm,
                &ctx.key,
                arg(args, "product_id")?,
                &user,
                arg(args, "requirement")?,
            );
            match found {
                Ok(r) => ToolResult::ok(r.render()),
                Err(e) => ToolResult::err(e.to_string()),
            }
        }
        "query_orders" => {
            let user = current_user(ctx)?;
            match query_orders(ctx.db, ctx.tool_llm, &ctx.key, &user, arg(args, "requirement")?) {
                Ok(r) => ToolResult::ok(r.rendered),
                Err(e) => ToolResult::err(e.to_string()),
            }
        }
        "start_flow" => start_flow(ctx.engine, ctx.session, ctx.db, args),
        "flow_set_slots" => flow_set_slots(ctx.engine, ctx.session, args),
        "flow_next" => flow_next(ctx.engine, ctx.session, ctx.db, args),
        "flow_cancel" => flow_cancel(ctx.engine, ctx.session, args),
        _ => return run_direct(ctx, call),
    })
}

/// Dispatches `call` if it is registered and visible in the current
/// authentication state.
pub fn execute_tool(
    registry: &ToolRegistry,
    call: &ToolCall,
    ctx: &mut ToolContext<'_>,
) -> Result<ToolResult, ToolError> {
    if registry.get(&call.name).is_none() {
        return Err(ToolError::UnknownTool(call.name.clone()));
    }
    let visible = gate_tools_by_auth(ctx.session, &registry.specs());
    if !visible.tools.iter().any(|t| t.name == call.name) {
        return Err(ToolError::HiddenTool(call.name.clone()));
    }
    Ok(run(registry, ctx, call).unwrap_or_else(|e| e))
}
