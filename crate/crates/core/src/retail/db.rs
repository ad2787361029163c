use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{is_order_id, is_product_id, Order, Product, ProductItem, User};
use super::RetailError;

/// The whole retail state: users, products and orders, plus a commit counter.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetailDatabase {
    pub users: BTreeMap<String, User>,
    pub products: BTreeMap<String, Product>,
    pub orders: BTreeMap<String, Order>,
    #[serde(default)]
    pub revision: u64,
}

/// Result of an authentication lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserLookup {
    pub user_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<String>>,
}

/// Opaque copy of a database used for episode isolation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot(RetailDatabase);

impl RetailDatabase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetailError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetailError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RetailError> {
        let db: RetailDatabase =
            serde_json::from_str(text).map_err(|e| RetailError::Malformed(e.to_string()))?;
        db.check_integrity()?;
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetailError> {
        let value = serde_json::to_value(self).expect("database serializes");
        let text = serde_json::to_string_pretty(&value).expect("value serializes");
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| RetailError::Io(e.to_string()))
    }

    /// Sorted-key, whitespace-free JSON. Two databases are equal iff these
    /// strings are equal.
    pub fn canonical_json(&self) -> String {
        // serde_json::Map is a BTreeMap here, so going through Value sorts
        // struct fields as well as map keys.
        let value = serde_json::to_value(self).expect("database serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn canonical_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.clone())
    }

    pub fn restore(&mut self, snapshot: &Snapshot) {
        *self = snapshot.0.clone();
    }

    /// Verifies ids, key consistency and foreign keys.
    pub fn check_integrity(&self) -> Result<(), RetailError> {
        let bad = |msg: String| Err(RetailError::Integrity(msg));
        let mut emails = BTreeMap::new();
        for (key, user) in &self.users {
            if key != &user.user_id {
                return bad(format!("user key {key} != {}", user.user_id));
            }
            if let Some(other) = emails.insert(user.email.as_str(), key) {
                return bad(format!("email {} shared by {other} and {key}", user.email));
            }
        }
        for (key, product) in &self.products {
            if key != &product.product_id || !is_product_id(key) {
                return bad(format!("bad product id {key}"));
            }
            let mut attr_names: Option<Vec<&String>> = None;
            for (item_key, item) in &product.items {
                if item_key != &item.item_id {
                    return bad(format!("item key {item_key} != {}", item.item_id));
                }
                if item.price.cents() <= 0 || item.attributes.is_empty() {
                    return bad(format!("item {item_key} needs a price and attributes"));
                }
                let names: Vec<&String> = item.attributes.keys().collect();
                match &attr_names {
                    None => attr_names = Some(names),
                    Some(expected) if *expected != names => {
                        return bad(format!("item {item_key} attribute set differs"));
                    }
                    _ => {}
                }
            }
        }
        for (key, order) in &self.orders {
            if key != &order.order_id || !is_order_id(key) {
                return bad(format!("bad order id {key}"));
            }
            let Some(user) = self.users.get(&order.user_id) else {
                return bad(format!("order {key} references unknown user"));
            };
            if user.payment_method(&order.payment_method_id).is_none() {
                return bad(format!("order {key} references unknown payment method"));
            }
            for line in &order.line_items {
                if self.item(&line.product_id, &line.item_id).is_none() {
                    return bad(format!("order {key} references unknown item {}", line.item_id));
                }
            }
            let cancelled = order.status == super::OrderStatus::Cancelled;
            if cancelled != order.cancellation_reason.is_some() {
                return bad(format!("order {key} cancellation reason mismatch"));
            }
        }
        Ok(())
    }

    pub fn item(&self, product_id: &str, item_id: &str) -> Option<&ProductItem> {
        self.products.get(product_id)?.items.get(item_id)
    }

    /// Finds an item by id alone, returning its product too.
    pub fn find_item(&self, item_id: &str) -> Option<(&Product, &ProductItem)> {
        self.products
            .values()
            .find_map(|p| p.items.get(item_id).map(|i| (p, i)))
    }

    /// Orders belonging to `user_id`, in order-id order.
    pub fn orders_of<'a>(&'a self, user_id: &'a str) -> impl Iterator<Item = &'a Order> + 'a {
        self.orders.values().filter(move |o| o.user_id == user_id)
    }

    /// One-line summary per order: id, status and item count.
    pub fn order_summaries(&self, user_id: &str) -> Vec<String> {
        self.orders_of(user_id)
            .map(|o| {
                format!(
                    "{} status={} items={}",
                    o.order_id,
                    o.status,
                    o.item_count()
                )
            })
            .collect()
    }

    pub fn find_user_id_by_email(
        &self,
        email: &str,
        with_order_summary: bool,
    ) -> Result<UserLookup, RetailError> {
        let email = email.trim();
        let user = self
            .users
            .values()
            .find(|u| u.email.eq_ignore_ascii_case(email))
            .ok_or_else(|| RetailError::NotFound(format!("user with email {email}")))?;
        Ok(self.lookup(user, with_order_summary))
    }

    pub fn find_user_id_by_name_zip(
        &self,
        first: &str,
        last: &str,
        zip: &str,
        with_order_summary: bool,
    ) -> Result<UserLookup, RetailError> {
        let matches: Vec<&User> = self
            .users
            .values()
            .filter(|u| {
                u.first_name.eq_ignore_ascii_case(first.trim())
                    && u.last_name.eq_ignore_ascii_case(last.trim())
                    && u.zip == zip.trim()
            })
            .collect();
        match matches.as_slice() {
            [] => Err(RetailError::NotFound(format!(
                "user {first} {last} in zip {zip}"
            ))),
            [user] => Ok(self.lookup(user, with_order_summary)),
            many => Err(RetailError::Ambiguous(format!(
                "{} users named {first} {last} in zip {zip}",
                many.len()
            ))),
        }
    }

    fn lookup(&self, user: &User, with_order_summary: bool) -> UserLookup {
        UserLookup {
            user_id: user.user_id.clone(),
            orders: with_order_summary.then(|| self.order_summaries(&user.user_id)),
        }
    }

    pub fn get_user_details(&self, user_id: &str) -> Result<&User, RetailError> {
        self.users
            .get(user_id)
            .ok_or_else(|| RetailError::NotFound(format!("user {user_id}")))
    }

    pub fn get_order_details(&self, order_id: &str) -> Result<&Order, RetailError> {
        self.orders
            .get(order_id)
            .ok_or_else(|| RetailError::NotFound(format!("order {order_id}")))
    }

    pub fn get_product_details(&self, product_id: &str) -> Result<&Product, RetailError> {
        self.products
            .get(product_id)
            .ok_or_else(|| RetailError::NotFound(format!("product {product_id}")))
    }
}
