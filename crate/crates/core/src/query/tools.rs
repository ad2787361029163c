use serde_json::{json, Value};

use super::{
    build_attribute_catalog, execute_item_query, parse_order_query_output, parse_tool_llm_output,
    ItemQuery, OrderQuery,
};
use crate::llm::{ChatMessage, ChatModel, ScriptKey};
use crate::retail::{Order, ProductItem, RetailDatabase, RetailError};

pub const FIND_PRODUCT_ITEMS_PROMPT: &str = include_str!("../../prompts/find_product_items.txt");
pub const QUERY_ORDERS_PROMPT: &str = include_str!("../../prompts/query_orders.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct ItemSearch {
    pub product_id: String,
    pub product_name: String,
    pub items: Vec<ProductItem>,
    /// The requirement could not be applied; `items` lists every available item.
    pub fallback: bool,
    pub query: Option<ItemQuery>,
}

impl ItemSearch {
    pub fn render(&self) -> String {
        let head = if self.fallback {
            format!(
                "{} ({}): the requirement could not be applied; all {} available items:",
                self.product_name,
                self.product_id,
                self.items.len()
            )
        } else {
            format!(
                "{} ({}): {} matching item(s):",
                self.product_name,
                self.product_id,
                self.items.len()
            )
        };
        format!("{head}\n{}", render_item_table(&self.items))
    }
}

/// One row per item: id, attribute values in name order, price.
pub fn render_item_table(items: &[ProductItem]) -> String {
    let Some(first) = items.first() else {
        return "(no items)".to_string();
    };
    let names: Vec<&String> = first.attributes.keys().collect();
    let mut lines = vec![format!(
        "item_id | {} | price",
        names.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(" | ")
    )];
    for item in items {
        let values: Vec<&str> = names
            .iter()
            .map(|n| item.attributes.get(*n).map(String::as_str).unwrap_or("-"))
            .collect();
        lines.push(format!("{} | {} | {}", item.item_id, values.join(" | "), item.price));
    }
    lines.join("\n")
}

fn past_items(db: &RetailDatabase, user_id: &str, product_id: &str) -> Vec<ProductItem> {
    let mut out: Vec<ProductItem> = db
        .orders_of(user_id)
        .flat_map(|o| o.line_items.iter())
        .filter(|li| li.product_id == product_id)
        .filter_map(|li| db.item(product_id, &li.item_id).cloned())
        .collect();
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    out.dedup_by(|a, b| a.item_id == b.item_id);
    out
}

/// Builds the catalog and past-order list, asks `llm` for a structured
/// query and executes it. Any LLM or parse failure falls back to the full
/// list of available items.
pub fn find_product_items(
    db: &RetailDatabase,
    llm: &mut dyn ChatModel,
    key: &ScriptKey,
    product_id: &str,
    user_id: &str,
    requirement: &str,
) -> Result<ItemSearch, RetailError> {
    let product = db.get_product_details(product_id)?;
    db.get_user_details(user_id)?;
    let items: Vec<ProductItem> = product.items.values().cloned().collect();
    let available: Vec<ProductItem> = items.iter().filter(|i| i.available).cloned().collect();
    let fallback = |query| ItemSearch {
        product_id: product_id.to_string(),
        product_name: product.name.clone(),
        items: available.clone(),
        fallback: true,
        query,
    };
    let catalog = match build_attribute_catalog(product) {
        Ok(c) => c,
        Err(_) => return Ok(fallback(None)),
    };
    let past = past_items(db, user_id, product_id);
    let past_json: Vec<Value> = past
        .iter()
        .map(|i| json!({"item_id": i.item_id, "attributes": i.attributes}))
        .collect();
    let request = format!(
        "Product: {} ({})\nAttribute values: {}\nUser's past orders of this product: {}\nUser requirement: {}",
        product.name,
        product_id,
        json!(catalog.attributes),
        Value::Array(past_json),
        requirement
    );
    let messages = [
        ChatMessage::system(FIND_PRODUCT_ITEMS_PROMPT),
        ChatMessage::user(request),
    ];
    let parsed = llm
        .complete(key, &messages, &[])
        .ok()
        .and_then(|c| parse_tool_llm_output(&c.text()).ok());
    let Some(out) = parsed else {
        return Ok(fallback(None));
    };
    Ok(ItemSearch {
        product_id: product_id.to_string(),
        product_name: product.name.clone(),
        items: execute_item_query(&out.query, &items, &past),
        fallback: false,
        query: Some(out.query),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSearch {
    pub user_id: String,
    pub order_ids: Vec<String>,
    pub fallback: bool,
    pub rendered: String,
}

fn product_names(db: &RetailDatabase, order: &Order) -> Vec<String> {
    order
        .line_items
        .iter()
        .map(|li| {
            db.products
                .get(&li.product_id)
                .map(|p| p.name.clone())
                .unwrap_or_else(|| li.product_id.clone())
        })
        .collect()
}

pub fn execute_order_query<'a>(db: &RetailDatabase, q: &OrderQuery, orders: &[&'a Order]) -> Vec<&'a Order> {
    let accepts = |list: &Option<Vec<String>>, value: &str| {
        list.as_ref()
            .is_none_or(|l| l.iter().any(|v| v.eq_ignore_ascii_case(value)))
    };
    orders
        .iter()
        .filter(|o| accepts(&q.status, &o.status.to_string()))
        .filter(|o| {
            let id = o.order_id.trim_start_matches('#');
            q.order_id.as_ref().is_none_or(|l| {
                l.iter().any(|v| v.trim_start_matches('#') == id)
            })
        })
        .filter(|o| {
            q.contains_product_name.as_ref().is_none_or(|names| {
                product_names(db, o)
                    .iter()
                    .any(|n| names.iter().any(|want| n.eq_ignore_ascii_case(want)))
            })
        })
        .copied()
        .collect()
}

fn render_orders(db: &RetailDatabase, orders: &[&Order]) -> String {
    if orders.is_empty() {
        return "(no orders)".to_string();
    }
    orders
        .iter()
        .map(|o| {
            let items: Vec<String> = o
                .line_items
                .iter()
                .zip(product_names(db, o))
                .map(|(li, name)| format!("{name} {}", li.item_id))
                .collect();
            format!("{} | {} | {} | total {}", o.order_id, o.status, items.join(", "), o.total())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Same pipeline as [`find_product_items`] over the user's orders. The
/// fallback is every order of the user.
pub fn query_orders(
    db: &RetailDatabase,
    llm: &mut dyn ChatModel,
    key: &ScriptKey,
    user_id: &str,
    requirement: &str,
) -> Result<OrderSearch, RetailError> {
    db.get_user_details(user_id)?;
    let orders: Vec<&Order> = db.orders_of(user_id).collect();
    let listing: Vec<String> = orders
        .iter()
        .map(|o| format!("{} status={} products: {}", o.order_id, o.status, product_names(db, o).join(", ")))
        .collect();
    let request = format!(
        "Orders:\n{}\nUser requirement: {requirement}",
        if listing.is_empty() { "(none)".to_string() } else { listing.join("\n") }
    );
    let messages = [ChatMessage::system(QUERY_ORDERS_PROMPT), ChatMessage::user(request)];
    let parsed = llm
        .complete(key, &messages, &[])
        .ok()
        .and_then(|c| parse_order_query_output(&c.text()).ok());
    let (selected, fallback) = match parsed {
        Some((_, q)) => (execute_order_query(db, &q, &orders), false),
        None => (orders.clone(), true),
    };
    let mut rendered = String::new();
    if fallback {
        rendered.push_str("the requirement could not be applied; all orders of the user:\n");
    } else {
        rendered.push_str(&format!("{} matching order(s):\n", selected.len()));
    }
    rendered.push_str(&render_orders(db, &selected));
    Ok(OrderSearch {
        user_id: user_id.to_string(),
        order_ids: selected.iter().map(|o| o.order_id.clone()).collect(),
        fallback,
        rendered,
    })
}
