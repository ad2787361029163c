//! Shared fixtures and random generators for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use smag_core::agent::{Agent, Conversation, TurnError};
use smag_core::context::WorkingMemory;
use smag_core::flow::{FlowEngine, SessionState};
use smag_core::llm::{render_tool_result, ChatMessage, ScriptEntry, ScriptedModel, Suggestion, ToolCall, ToolResult};
use smag_core::query::{ItemQuery, PriceFiltering, Scope};
use smag_core::retail::{Money, OrderStatus, ProductItem, RetailDatabase};
use smag_core::retail_flows::{flow_cancel, flow_next, flow_set_slots, start_flow, FLOW_TYPES};

pub use rand::SeedableRng;

/// Property-test config without on-disk failure persistence.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        other => panic!("not an object: {other}"),
    }
}

/// Agent output that issues `calls` (a JSON array of `{name, arguments}`).
pub fn act(calls: Value) -> String {
    format!("THOUGHT: next step.\nACTIONS:\n{calls}")
}

pub fn respond(text: &str) -> String {
    format!("THOUGHT: reply.\nRESPOND: {text}")
}

/// Wildcard-episode script: `turns[t][r]` answers turn `t`, round `r + 1`.
pub fn agent_script(turns: &[Vec<String>]) -> ScriptedModel {
    let mut entries = Vec::new();
    for (t, rounds) in turns.iter().enumerate() {
        for (r, text) in rounds.iter().enumerate() {
            entries.push(ScriptEntry {
                episode: None,
                turn: t as u64,
                round: r as u32 + 1,
                text: text.clone(),
                prompt_sha256: None,
            });
        }
    }
    ScriptedModel::new(entries)
}

/// Drives `agent` through one scripted turn per entry of `turns`, with the
/// user saying `user_messages[t]`.
pub fn drive(
    agent: &Agent,
    conv: &mut Conversation,
    db: &mut RetailDatabase,
    user_messages: &[&str],
    turns: &[Vec<String>],
) -> Vec<Result<String, TurnError>> {
    let mut llm = agent_script(turns);
    let mut tool_llm = ScriptedModel::default();
    user_messages
        .iter()
        .map(|m| agent.handle_turn(conv, db, m, &mut llm, &mut tool_llm).0)
        .collect()
}

/// Brute-force reference for item search.
pub fn oracle_item_query(q: &ItemQuery, items: &[ProductItem], past: &[ProductItem]) -> Vec<String> {
    let mut hits: Vec<&ProductItem> = Vec::new();
    for item in items {
        if !item.available {
            continue;
        }
        if q.scope == Scope::PastOrders && !past.iter().any(|p| p.item_id == item.item_id) {
            continue;
        }
        let mut ok = true;
        for (name, accepted) in &q.attribute_filters {
            match item.attributes.get(name) {
                Some(v) if accepted.iter().any(|a| a == v) => {}
                _ => ok = false,
            }
        }
        if ok && !hits.iter().any(|h| h.item_id == item.item_id) {
            hits.push(item);
        }
    }
    let mut ids: Vec<(i64, String)> = hits.iter().map(|i| (i.price.cents(), i.item_id.clone())).collect();
    match q.price_filtering {
        PriceFiltering::None => {
            let mut out: Vec<String> = ids.into_iter().map(|(_, id)| id).collect();
            out.sort();
            out
        }
        PriceFiltering::Cheapest => {
            ids.sort();
            ids.into_iter().take(1).map(|(_, id)| id).collect()
        }
        PriceFiltering::MostExpensive => {
            let Some(top) = ids.iter().map(|(p, _)| *p).max() else {
                return Vec::new();
            };
            let mut best: Vec<String> = ids.into_iter().filter(|(p, _)| *p == top).map(|(_, id)| id).collect();
            best.sort();
            best.truncate(1);
            best
        }
    }
}

const ATTR_NAMES: [&str; 4] = ["color", "size", "material", "style"];
const ATTR_VALUES: [&str; 5] = ["a", "b", "c", "9", "10"];

/// Random items sharing one attribute-name set, a past-order subset and a
/// query whose values mostly come from the same value space.
pub fn random_query_instance(r: &mut ChaCha8Rng) -> (Vec<ProductItem>, Vec<ProductItem>, ItemQuery) {
    let n_attrs = r.gen_range(1..=3);
    let names: Vec<&str> = ATTR_NAMES.choose_multiple(r, n_attrs).copied().collect();
    let n_items = r.gen_range(0..=10);
    let mut items = Vec::new();
    for k in 0..n_items {
        let attributes: BTreeMap<String, String> = names
            .iter()
            .map(|n| (n.to_string(), ATTR_VALUES.choose(r).unwrap().to_string()))
            .collect();
        items.push(ProductItem {
            item_id: format!("{:010}", 1_000_000_000u64 + (k as u64 * 7919 + r.gen_range(0..7919)) % 8_999_999_999),
            attributes,
            price: Money::from_cents(r.gen_range(1..=6) * 500),
            available: r.gen_bool(0.8),
        });
    }
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    items.dedup_by(|a, b| a.item_id == b.item_id);
    items.shuffle(r);
    let past: Vec<ProductItem> = items.iter().filter(|_| r.gen_bool(0.4)).cloned().collect();
    let mut q = ItemQuery::default();
    for name in &names {
        if r.gen_bool(0.5) {
            let k = r.gen_range(1..=3);
            let values: Vec<String> = ATTR_VALUES.choose_multiple(r, k).map(|v| v.to_string()).collect();
            q.attribute_filters.insert(name.to_string(), values);
        }
    }
    if r.gen_bool(0.1) {
        q.attribute_filters.insert("unknown".into(), vec!["a".into()]);
    }
    q.price_filtering = *[PriceFiltering::None, PriceFiltering::Cheapest, PriceFiltering::MostExpensive]
        .choose(r)
        .unwrap();
    q.scope = if r.gen_bool(0.3) { Scope::PastOrders } else { Scope::All };
    (items, past, q)
}

/// Another available variant of the product behind `item_id`.
pub fn other_variant(db: &RetailDatabase, item_id: &str) -> Option<String> {
    let (product, _) = db.find_item(item_id)?;
    product
        .items
        .values()
        .find(|i| i.available && i.item_id != item_id)
        .map(|i| i.item_id.clone())
}

pub fn random_flow_params(r: &mut ChaCha8Rng, db: &RetailDatabase, user: &str) -> Value {
    let orders: Vec<_> = db.orders_of(user).collect();
    let Some(order) = orders.choose(r) else {
        return json!({"flow_type": FLOW_TYPES.choose(r).unwrap(), "params": {"order_id": "#W0000000"}});
    };
    let user_rec = &db.users[user];
    let pm = user_rec.payment_methods.choose(r).map(|p| p.id.clone()).unwrap_or_default();
    let item = order.line_items.choose(r).map(|l| l.item_id.clone()).unwrap_or_default();
    let new_item = other_variant(db, &item).unwrap_or_else(|| item.clone());
    let flow_type = match order.status {
        OrderStatus::Pending => *[FLOW_TYPES[0], FLOW_TYPES[1], FLOW_TYPES[2]].choose(r).unwrap(),
        _ => *[FLOW_TYPES[3], FLOW_TYPES[4]].choose(r).unwrap(),
    };
    let params = match flow_type {
        "CancelPendingOrder" if r.gen_bool(0.5) => {
            json!({"order_id": order.order_id, "reason": "no longer needed"})
        }
        "CancelPendingOrder" => json!({"order_id": order.order_id}),
        "ModifyPendingOrderAddress" => {
            json!({"order_id": order.order_id, "address": user_rec.default_address})
        }
        "ReturnDeliveredOrderItems" => {
            json!({"order_id": order.order_id, "item_ids": [item], "payment_method_id": pm})
        }
        _ => json!({"order_id": order.order_id, "item_ids": [item], "new_item_ids": [new_item], "payment_method_id": pm}),
    };
    json!({"flow_type": flow_type, "params": params})
}

/// One recorded step of a random walk.
#[derive(Debug, Clone)]
pub struct Step {
    pub op: &'static str,
    pub args: Value,
    pub before: SessionState,
    pub after: SessionState,
    pub db_before: RetailDatabase,
    pub revision_after: u64,
    pub result: Option<ToolResult>,
}

/// Random walk over the public flow tools, authentication and turn ends;
/// every state it visits is reachable by a real agent.
pub fn random_walk(
    r: &mut ChaCha8Rng,
    engine: &FlowEngine<RetailDatabase>,
    db: &mut RetailDatabase,
    steps: usize,
) -> (SessionState, Vec<Step>) {
    let mut session = SessionState::new();
    let users: Vec<String> = db.users.keys().cloned().collect();
    if r.gen_bool(0.8) {
        session.authenticated_user_id = Some(users.choose(r).unwrap().clone());
    }
    let mut log = Vec::new();
    for _ in 0..steps {
        let ids: Vec<String> = session.active_flows.iter().map(|f| f.instance_id.clone()).collect();
        let pick = |r: &mut ChaCha8Rng| {
            if r.gen_bool(0.9) {
                ids.choose(r).cloned().unwrap_or_else(|| "flow_1".to_string())
            } else {
                format!("flow_{}", r.gen_range(1..6))
            }
        };
        let before = session.clone();
        let db_before = db.clone();
        let (op, args, result) = match r.gen_range(0..10) {
            0 => {
                session.authenticated_user_id = Some(users.choose(r).unwrap().clone());
                ("auth", Value::Null, None)
            }
            1 | 2 => {
                let user = session
                    .authenticated_user_id
                    .clone()
                    .unwrap_or_else(|| users.choose(r).unwrap().clone());
                let args = random_flow_params(r, db, &user);
                let res = start_flow(engine, &mut session, db, &obj(args.clone()));
                ("start_flow", args, Some(res))
            }
            3 => {
                let slots = [json!({"reason": "ordered by mistake"}), json!({"reason": 3}), json!({"color": "red"})]
                    .choose(r)
                    .unwrap()
                    .clone();
                let args = json!({"instance_id": pick(r), "slots": slots});
                let res = flow_set_slots(engine, &mut session, &obj(args.clone()));
                ("flow_set_slots", args, Some(res))
            }
            4..=6 => {
                let input = [
                    json!({"needs_address_change": false}),
                    json!({"needs_address_change": true}),
                    json!({"explicitly_confirmed": true}),
                    json!({"explicitly_confirmed": true}),
                    json!({"explicitly_confirmed": false}),
                    json!({"explicitly_confirmed": "yes"}),
                    json!({}),
                ]
                .choose(r)
                .unwrap()
                .clone();
                let args = json!({"instance_id": pick(r), "input": input});
                let res = flow_next(engine, &mut session, db, &obj(args.clone()));
                ("flow_next", args, Some(res))
            }
            7 => {
                let args = json!({"instance_id": pick(r)});
                let res = flow_cancel(engine, &mut session, &obj(args.clone()));
                ("flow_cancel", args, Some(res))
            }
            _ => {
                session.turn_index += 1;
                ("end_turn", Value::Null, None)
            }
        };
        log.push(Step {
            op,
            args,
            before,
            after: session.clone(),
            db_before,
            revision_after: db.revision,
            result,
        });
    }
    (session, log)
}

pub fn random_session(
    r: &mut ChaCha8Rng,
    engine: &FlowEngine<RetailDatabase>,
    db: &mut RetailDatabase,
) -> SessionState {
    let steps = r.gen_range(0..14);
    random_walk(r, engine, db, steps).0
}

const TOOL_NAMES: [&str; 3] = ["get_order_details", "get_product_details", "start_flow"];

/// Random working memory over a small call-key space so that supersession
/// and suggestion consumption both occur often.
pub fn random_memory(r: &mut ChaCha8Rng) -> WorkingMemory {
    let mut trace = Vec::new();
    let len = r.gen_range(0..24);
    for i in 0..len {
        let m = match r.gen_range(0..10) {
            0..=2 => ChatMessage::user(format!("user says {i} about #W{:07}", r.gen_range(0..3))),
            3..=4 => ChatMessage::assistant(format!("assistant {i}")),
            5 => ChatMessage::system(format!("note {i}")),
            _ => {
                let call = ToolCall::new(
                    TOOL_NAMES.choose(r).unwrap(),
                    json!({"id": r.gen_range(0..3)}),
                );
                let suggestions = if r.gen_bool(0.4) {
                    vec![Suggestion {
                        id: format!("s{}", r.gen_range(0..4)),
                        text: format!("confirm {i}?"),
                    }]
                } else {
                    Vec::new()
                };
                render_tool_result(
                    &call,
                    &ToolResult::Ok {
                        text: format!("result {i}"),
                        suggestions,
                    },
                )
            }
        };
        trace.push(m);
    }
    let consumed = (0..4).filter(|_| r.gen_bool(0.5)).map(|k| format!("s{k}")).collect();
    WorkingMemory {
        base_system_instructions: "base".into(),
        tool_specs: Vec::new(),
        flow_infos: Vec::new(),
        trace,
        consumed_suggestion_ids: consumed,
    }
}
