//! Natural-language item and order search: an LLM maps the requirement to a
//! structured query, which is then executed deterministically.

mod tools;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::retail::{Product, ProductItem};

pub use tools::{
    execute_order_query, find_product_items, query_orders, render_item_table, ItemSearch, OrderSearch,
    FIND_PRODUCT_ITEMS_PROMPT, QUERY_ORDERS_PROMPT,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("product {0} has no items")]
    EmptyProduct(String),
    #[error("could not parse tool output: {0}")]
    ParseFailure(String),
}

/// Distinct attribute values of one product, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCatalog {
    pub product_id: String,
    pub attributes: BTreeMap<String, Vec<String>>,
}

pub fn build_attribute_catalog(product: &Product) -> Result<AttributeCatalog, QueryError> {
    if product.items.is_empty() {
        return Err(QueryError::EmptyProduct(product.product_id.clone()));
    }
    let mut attributes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for item in product.items.values() {
        for (name, value) in &item.attributes {
            attributes.entry(name.clone()).or_default().push(value.clone());
        }
    }
    for values in attributes.values_mut() {
        values.sort();
        values.dedup();
    }
    Ok(AttributeCatalog {
        product_id: product.product_id.clone(),
        attributes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceFiltering {
    Cheapest,
    MostExpensive,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    PastOrders,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ItemQuery {
    pub attribute_filters: BTreeMap<String, Vec<String>>,
    pub price_filtering: PriceFiltering,
    pub scope: Scope,
}

impl ItemQuery {
    pub fn matches(&self, item: &ProductItem) -> bool {
        self.attribute_filters.iter().all(|(name, accepted)| {
            item.attributes
                .get(name)
                .is_some_and(|v| accepted.contains(v))
        })
    }
}

/// Candidates are `items`, or only those also in `past_order_items` when
/// the scope is past orders. Unavailable items never match. Price filtering
/// keeps the single cheapest or most expensive match (smaller item id wins
/// ties); otherwise matches come back sorted by item id.
pub fn execute_item_query(
    q: &ItemQuery,
    items: &[ProductItem],
    past_order_items: &[ProductItem],
) -> Vec<ProductItem> {
    let mut matched: Vec<&ProductItem> = items
        .iter()
        .filter(|i| match q.scope {
            Scope::All => true,
            Scope::PastOrders => past_order_items.iter().any(|p| p.item_id == i.item_id),
        })
        .filter(|i| i.available && q.matches(i))
        .collect();
    matched.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    matched.dedup_by(|a, b| a.item_id == b.item_id);
    let pick = match q.price_filtering {
        PriceFiltering::None => return matched.into_iter().cloned().collect(),
        PriceFiltering::Cheapest => matched
            .iter()
            .min_by(|a, b| a.price.cmp(&b.price).then(a.item_id.cmp(&b.item_id))),
        PriceFiltering::MostExpensive => matched
            .iter()
            .min_by(|a, b| b.price.cmp(&a.price).then(a.item_id.cmp(&b.item_id))),
    };
    pick.map(|i| vec![(*i).clone()]).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolLlmOutput {
    pub thought: String,
    pub query: ItemQuery,
}

/// Splits `THOUGHT: ... JSON: {...}` into the thought and the JSON object.
fn split_sections(text: &str) -> Result<(String, serde_json::Map<String, Value>), QueryError> {
    let fail = |m: &str| Err(QueryError::ParseFailure(m.to_string()));
    let Some(json_at) = text.rfind("JSON:") else {
        return fail("missing \"JSON:\" section");
    };
    let head = &text[..json_at];
    let thought = match head.find("THOUGHT:") {
        Some(i) => head[i + "THOUGHT:".len()..].trim().to_string(),
        None => return fail("missing \"THOUGHT:\" section"),
    };
    let body = &text[json_at + "JSON:".len()..];
    let (Some(start), Some(end)) = (body.find('{'), body.rfind('}')) else {
        return fail("JSON section has no object");
    };
    if end < start {
        return fail("JSON section has no object");
    }
    match serde_json::from_str::<Value>(&body[start..=end]) {
        Ok(Value::Object(m)) => Ok((thought, m)),
        Ok(_) => fail("JSON section is not an object"),
        Err(e) => Err(QueryError::ParseFailure(format!("invalid JSON: {e}"))),
    }
}

fn value_list(key: &str, v: &Value) -> Result<Vec<String>, QueryError> {
    let one = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(QueryError::ParseFailure(format!("{key} has a non-scalar value"))),
    };
    match v {
        Value::Array(a) => a.iter().map(one).collect(),
        other => Ok(vec![one(other)?]),
    }
}

pub fn parse_tool_llm_output(text: &str) -> Result<ToolLlmOutput, QueryError> {
    let (thought, obj) = split_sections(text)?;
    let mut query = ItemQuery::default();
    for (key, value) in obj {
        match key.as_str() {
            "price_filtering" => {
                query.price_filtering = match value.as_str() {
                    Some("cheapest") => PriceFiltering::Cheapest,
                    Some("most expensive") | Some("most_expensive") => PriceFiltering::MostExpensive,
                    Some("none") => PriceFiltering::None,
                    None if value.is_null() => PriceFiltering::None,
                    _ => {
                        return Err(QueryError::ParseFailure(format!(
                            "unknown price_filtering {value}"
                        )))
                    }
                }
            }
            "scope" => {
                query.scope = match value.as_str() {
                    Some("all") => Scope::All,
                    Some("past orders") => Scope::PastOrders,
                    _ => return Err(QueryError::ParseFailure(format!("unknown scope {value}"))),
                }
            }
            _ => {
                let values = value_list(&key, &value)?;
                query.attribute_filters.insert(key, values);
            }
        }
    }
    Ok(ToolLlmOutput { thought, query })
}

/// Structured order filter; an absent key accepts every order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrderQuery {
    pub status: Option<Vec<String>>,
    pub contains_product_name: Option<Vec<String>>,
    pub order_id: Option<Vec<String>>,
}

pub fn parse_order_query_output(text: &str) -> Result<(String, OrderQuery), QueryError> {
    let (thought, obj) = split_sections(text)?;
    let mut q = OrderQuery::default();
    for (key, value) in obj {
        let values = value_list(&key, &value)?;
        match key.as_str() {
            "status" => q.status = Some(values),
            "contains_product_name" => q.contains_product_name = Some(values),
            "order_id" => q.order_id = Some(values),
            other => return Err(QueryError::ParseFailure(format!("unknown order filter {other}"))),
        }
    }
    Ok((thought, q))
}
