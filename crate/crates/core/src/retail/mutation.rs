//! Dry-run validation and confirmed commits of the five order mutations.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::db::RetailDatabase;
use super::model::{
    Address, Money, Order, OrderStatus, PostDeliveryAction, PostDeliveryDetail,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MutationRequest {
    CancelPendingOrder {
        order_id: String,
        #[serde(default)]
        reason: Option<String>,
    },
    ModifyPendingOrderAddress {
        order_id: String,
        address: Address,
    },
    ModifyPendingOrderItems {
        order_id: String,
        item_ids: Vec<String>,
        new_item_ids: Vec<String>,
        payment_method_id: String,
    },
    ReturnDeliveredOrderItems {
        order_id: String,
        item_ids: Vec<String>,
        payment_method_id: String,
    },
    ExchangeDeliveredOrderItems {
        order_id: String,
        item_ids: Vec<String>,
        new_item_ids: Vec<String>,
        payment_method_id: String,
    },
}

impl MutationRequest {
    pub fn order_id(&self) -> &str {
        match self {
            MutationRequest::CancelPendingOrder { order_id, .. }
            | MutationRequest::ModifyPendingOrderAddress { order_id, .. }
            | MutationRequest::ModifyPendingOrderItems { order_id, .. }
            | MutationRequest::ReturnDeliveredOrderItems { order_id, .. }
            | MutationRequest::ExchangeDeliveredOrderItems { order_id, .. } => order_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MutationRequest::CancelPendingOrder { .. } => "CancelPendingOrder",
            MutationRequest::ModifyPendingOrderAddress { .. } => "ModifyPendingOrderAddress",
            MutationRequest::ModifyPendingOrderItems { .. } => "ModifyPendingOrderItems",
            MutationRequest::ReturnDeliveredOrderItems { .. } => "ReturnDeliveredOrderItems",
            MutationRequest::ExchangeDeliveredOrderItems { .. } => "ExchangeDeliveredOrderItems",
        }
    }

    /// SHA-256 over the canonical JSON of the request.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasonCode {
    OrderNotFound,
    OrderNotPending,
    OrderNotDelivered,
    AlreadyReturnedOrExchanged,
    EmptyItemList,
    ItemNotInOrder,
    ItemUnavailable,
    ItemProductMismatch,
    PaymentMethodUnknown,
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: String,
    pub order_id: String,
    pub valid: bool,
    pub reasons: Vec<ReasonCode>,
    /// Human-readable description of what the mutation would do.
    pub details: Vec<String>,
    pub warnings: Vec<String>,
    /// New prices minus old prices; negative for refunds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price_delta: Option<Money>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payment_method_id: Option<String>,
    /// Information that must still be collected before a commit.
    pub follow_ups: Vec<String>,
}

impl ValidationReport {
    fn new(req: &MutationRequest) -> Self {
        ValidationReport {
            kind: req.kind().to_string(),
            order_id: req.order_id().to_string(),
            valid: true,
            reasons: Vec::new(),
            details: Vec::new(),
            warnings: Vec::new(),
            price_delta: None,
            payment_method_id: None,
            follow_ups: Vec::new(),
        }
    }

    fn reject(&mut self, code: ReasonCode, message: String) {
        self.valid = false;
        if !self.reasons.contains(&code) {
            self.reasons.push(code);
        }
        self.warnings.push(message);
    }

    pub fn is_committable(&self) -> bool {
        self.valid && self.follow_ups.is_empty()
    }

    /// Multi-line rendering embedded into confirmation messages.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let verdict = if self.valid { "valid" } else { "INVALID" };
        out.push_str(&format!("{} on order {}: {verdict}", self.kind, self.order_id));
        if !self.reasons.is_empty() {
            let codes: Vec<String> = self.reasons.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(" ({})", codes.join(", ")));
        }
        for d in &self.details {
            out.push_str("\n- ");
            out.push_str(d);
        }
        if let Some(delta) = self.price_delta {
            if delta.cents() >= 0 {
                out.push_str(&format!("\n- Price difference to charge: ${delta}"));
            } else {
                out.push_str(&format!("\n- Amount to refund: ${}", delta.abs()));
            }
        }
        if let Some(pm) = &self.payment_method_id {
            out.push_str(&format!("\n- Payment method: {pm}"));
        }
        for w in &self.warnings {
            out.push_str("\n- Warning: ");
            out.push_str(w);
        }
        for f in &self.follow_ups {
            out.push_str(&format!("\n- Still required: {f}"));
        }
        out
    }
}

/// Authorization to commit one specific mutation. Not cloneable and consumed
/// by [`commit_mutation`], so each token is used at most once.
#[derive(Debug, PartialEq, Eq)]
pub struct ConfirmationToken {
    instance_id: String,
    fingerprint: String,
    issued_at: u64,
}

impl ConfirmationToken {
    pub(crate) fn issue(instance_id: &str, request: &MutationRequest, turn_index: u64) -> Self {
        ConfirmationToken {
            instance_id: instance_id.to_string(),
            fingerprint: request.fingerprint(),
            issued_at: turn_index,
        }
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn issued_at(&self) -> u64 {
        self.issued_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationReceipt {
    pub kind: String,
    pub order_id: String,
    pub before: String,
    pub after: String,
    /// Positive amounts are charged, negative amounts refunded.
    pub amount: Money,
    pub payment_method_id: Option<String>,
    pub revision: u64,
}

impl MutationReceipt {
    pub fn text(&self) -> String {
        let money = if self.amount.cents() >= 0 {
            format!("charged ${}", self.amount)
        } else {
            format!("refunded ${}", self.amount.abs())
        };
        let pm = self
            .payment_method_id
            .as_deref()
            .map(|p| format!(" via {p}"))
            .unwrap_or_default();
        format!(
            "{} committed on order {} ({money}{pm}).\nBefore: {}\nAfter: {}",
            self.kind, self.order_id, self.before, self.after
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommitError {
    #[error("confirmation token does not match this mutation")]
    TokenMismatch,
    #[error("precondition changed since validation: {}", .0.text())]
    PreconditionChanged(Box<ValidationReport>),
    #[error("missing required information: {}", .0.join(", "))]
    Incomplete(Vec<String>),
}

fn order_summary(db: &RetailDatabase, order: &Order) -> String {
    let items: Vec<String> = order
        .line_items
        .iter()
        .map(|l| {
            let name = db
                .products
                .get(&l.product_id)
                .map(|p| p.name.as_str())
                .unwrap_or("?");
            format!("{name} {}@${}", l.item_id, l.unit_price)
        })
        .collect();
    let mut s = format!(
        "{} status={} items=[{}] ship_to=\"{}\"",
        order.order_id,
        order.status,
        items.join(", "),
        order.shipping_address
    );
    if let Some(action) = order.post_delivery_action {
        s.push_str(&format!(" post_delivery={action}"));
    }
    if let Some(reason) = &order.cancellation_reason {
        s.push_str(&format!(" reason=\"{reason}\""));
    }
    s
}

/// Checks that every id in `item_ids` names a distinct line of the order and
/// returns the matching line indices.
fn match_lines(order: &Order, item_ids: &[String], report: &mut ValidationReport) -> Vec<usize> {
    if item_ids.is_empty() {
        report.reject(ReasonCode::EmptyItemList, "no items were specified".into());
        return Vec::new();
    }
    let mut used = vec![false; order.line_items.len()];
    let mut out = Vec::new();
    for id in item_ids {
        let found = order
            .line_items
            .iter()
            .enumerate()
            .position(|(i, l)| !used[i] && &l.item_id == id);
        match found {
            Some(i) => {
                used[i] = true;
                out.push(i);
            }
            None => report.reject(
                ReasonCode::ItemNotInOrder,
                format!("item {id} is not part of order {}", order.order_id),
            ),
        }
    }
    out
}

fn check_payment(db: &RetailDatabase, order: &Order, pm: &str, report: &mut ValidationReport) {
    report.payment_method_id = Some(pm.to_string());
    let known = db
        .users
        .get(&order.user_id)
        .is_some_and(|u| u.payment_method(pm).is_some());
    if !known {
        report.reject(
            ReasonCode::PaymentMethodUnknown,
            format!("payment method {pm} does not belong to the order's user"),
        );
    }
}

/// Validates replacing the lines at `lines` with `new_item_ids`, pairwise.
fn check_replacements(
    db: &RetailDatabase,
    order: &Order,
    lines: &[usize],
    new_item_ids: &[String],
    report: &mut ValidationReport,
) {
    if lines.len() != new_item_ids.len() {
        report.reject(
            ReasonCode::ItemProductMismatch,
            format!(
                "{} items to replace but {} new items given",
                lines.len(),
                new_item_ids.len()
            ),
        );
        return;
    }
    let mut delta = Money::ZERO;
    for (&line_idx, new_id) in lines.iter().zip(new_item_ids) {
        let line = &order.line_items[line_idx];
        let product = db.products.get(&line.product_id);
        let name = product.map(|p| p.name.as_str()).unwrap_or("?");
        match product.and_then(|p| p.items.get(new_id)) {
            None => report.reject(
                ReasonCode::ItemProductMismatch,
                format!("item {new_id} is not a variant of {name} ({})", line.product_id),
            ),
            Some(new_item) if !new_item.available => report.reject(
                ReasonCode::ItemUnavailable,
                format!("item {new_id} of {name} is not available"),
            ),
            Some(new_item) => {
                delta = delta + (new_item.price - line.unit_price) * line.quantity;
                let attrs: Vec<String> = new_item
                    .attributes
                    .iter()
                    .map(|(k, v)| format!("{k}: {v}"))
                    .collect();
                report.details.push(format!(
                    "{name}: {} (${}) -> {new_id} (${}) [{}]",
                    line.item_id,
                    line.unit_price,
                    new_item.price,
                    attrs.join(", ")
                ));
            }
        }
    }
    report.price_delta = Some(delta);
}

/// Dry-run: reports whether `request` could be committed, what it would
/// change and what it would cost. Never modifies the database.
pub fn validate_mutation(db: &RetailDatabase, request: &MutationRequest) -> ValidationReport {
    let mut report = ValidationReport::new(request);
    let Some(order) = db.orders.get(request.order_id()) else {
        report.reject(
            ReasonCode::OrderNotFound,
            format!("order {} does not exist", request.order_id()),
        );
        return report;
    };
    let require_status = |status: OrderStatus, report: &mut ValidationReport| {
        if order.status != status {
            let code = match status {
                OrderStatus::Pending => ReasonCode::OrderNotPending,
                _ => ReasonCode::OrderNotDelivered,
            };
            report.reject(
                code,
                format!(
                    "order {} is {}, but must be {status}",
                    order.order_id, order.status
                ),
            );
        }
    };
    match request {
        MutationRequest::CancelPendingOrder { reason, .. } => {
            require_status(OrderStatus::Pending, &mut report);
            report.details.push(format!(
                "Cancel the entire order ({} items)",
                order.item_count()
            ));
            report.price_delta = Some(Money::ZERO - order.total());
            report.payment_method_id = Some(order.payment_method_id.clone());
            match reason.as_deref().map(str::trim) {
                Some(r) if !r.is_empty() => {
                    report.details.push(format!("Cancellation reason: {r}"));
                }
                _ => report.follow_ups.push("reason".to_string()),
            }
        }
        MutationRequest::ModifyPendingOrderAddress { address, .. } => {
            require_status(OrderStatus::Pending, &mut report);
            report.details.push(format!(
                "Change shipping address from \"{}\" to \"{address}\"",
                order.shipping_address
            ));
        }
        MutationRequest::ModifyPendingOrderItems {
            item_ids,
            new_item_ids,
            payment_method_id,
            ..
        } => {
            require_status(OrderStatus::Pending, &mut report);
            let lines = match_lines(order, item_ids, &mut report);
            check_replacements(db, order, &lines, new_item_ids, &mut report);
            check_payment(db, order, payment_method_id, &mut report);
        }
        MutationRequest::ReturnDeliveredOrderItems {
            item_ids,
            payment_method_id,
            ..
        } => {
            require_status(OrderStatus::Delivered, &mut report);
            check_post_delivery(order, &mut report);
            let lines = match_lines(order, item_ids, &mut report);
            let mut refund = Money::ZERO;
            for &i in &lines {
                let line = &order.line_items[i];
                refund = refund + line.unit_price * line.quantity;
                report
                    .details
                    .push(format!("Return {} (${})", line.item_id, line.unit_price));
            }
            report.price_delta = Some(Money::ZERO - refund);
            check_payment(db, order, payment_method_id, &mut report);
        }
        MutationRequest::ExchangeDeliveredOrderItems {
            item_ids,
            new_item_ids,
            payment_method_id,
            ..
        } => {
            require_status(OrderStatus::Delivered, &mut report);
            check_post_delivery(order, &mut report);
            let lines = match_lines(order, item_ids, &mut report);
            check_replacements(db, order, &lines, new_item_ids, &mut report);
            check_payment(db, order, payment_method_id, &mut report);
        }
    }
    if matches!(
        request,
        MutationRequest::ReturnDeliveredOrderItems { .. }
            | MutationRequest::ExchangeDeliveredOrderItems { .. }
    ) && report.valid
    {
        report.warnings.push(
            "an order can be returned or exchanged only once; no further return or exchange will be possible for this order".into(),
        );
    }
    report
}

fn check_post_delivery(order: &Order, report: &mut ValidationReport) {
    if let Some(action) = order.post_delivery_action {
        report.reject(
            ReasonCode::AlreadyReturnedOrExchanged,
            format!("order {} was already {action}", order.order_id),
        );
    }
}

/// Applies a validated mutation. Re-validates against the current state, so
/// a stale token fails with [`CommitError::PreconditionChanged`].
pub fn commit_mutation(
    db: &mut RetailDatabase,
    request: &MutationRequest,
    token: ConfirmationToken,
) -> Result<MutationReceipt, CommitError> {
    if token.fingerprint != request.fingerprint() {
        return Err(CommitError::TokenMismatch);
    }
    let report = validate_mutation(db, request);
    if !report.valid {
        return Err(CommitError::PreconditionChanged(Box::new(report)));
    }
    if !report.follow_ups.is_empty() {
        return Err(CommitError::Incomplete(report.follow_ups));
    }
    let order = db.orders.get(request.order_id()).expect("validated order");
    let before = order_summary(db, order);
    let mut updated = order.clone();
    match request {
        MutationRequest::CancelPendingOrder { reason, .. } => {
            updated.status = OrderStatus::Cancelled;
            updated.cancellation_reason = reason.as_ref().map(|r| r.trim().to_string());
        }
        MutationRequest::ModifyPendingOrderAddress { address, .. } => {
            updated.shipping_address = address.clone();
        }
        MutationRequest::ModifyPendingOrderItems {
            item_ids,
            new_item_ids,
            payment_method_id,
            ..
        } => {
            replace_lines(db, &mut updated, item_ids, new_item_ids);
            updated.payment_method_id = payment_method_id.clone();
        }
        MutationRequest::ReturnDeliveredOrderItems {
            item_ids,
            payment_method_id,
            ..
        } => {
            updated.post_delivery_action = Some(PostDeliveryAction::Returned);
            updated.post_delivery_detail = Some(PostDeliveryDetail {
                item_ids: item_ids.clone(),
                new_item_ids: Vec::new(),
                payment_method_id: payment_method_id.clone(),
            });
        }
        MutationRequest::ExchangeDeliveredOrderItems {
            item_ids,
            new_item_ids,
            payment_method_id,
            ..
        } => {
            updated.post_delivery_action = Some(PostDeliveryAction::Exchanged);
            updated.post_delivery_detail = Some(PostDeliveryDetail {
                item_ids: item_ids.clone(),
                new_item_ids: new_item_ids.clone(),
                payment_method_id: payment_method_id.clone(),
            });
        }
    }
    let after = order_summary(db, &updated);
    db.orders.insert(updated.order_id.clone(), updated);
    db.revision += 1;
    Ok(MutationReceipt {
        kind: request.kind().to_string(),
        order_id: request.order_id().to_string(),
        before,
        after,
        amount: report.price_delta.unwrap_or(Money::ZERO),
        payment_method_id: report.payment_method_id,
        revision: db.revision,
    })
}

fn replace_lines(db: &RetailDatabase, order: &mut Order, old: &[String], new: &[String]) {
    let mut used = vec![false; order.line_items.len()];
    for (old_id, new_id) in old.iter().zip(new) {
        let idx = order
            .line_items
            .iter()
            .enumerate()
            .position(|(i, l)| !used[i] && &l.item_id == old_id)
            .expect("validated line");
        used[idx] = true;
        let line = &mut order.line_items[idx];
        let price = db
            .item(&line.product_id, new_id)
            .expect("validated item")
            .price;
        line.item_id = new_id.clone();
        line.unit_price = price;
    }
}

/// Commits without an interactive confirmation. Used for building grading
/// references and by the instruction-only baseline tools.
pub(crate) fn commit_unconfirmed(
    db: &mut RetailDatabase,
    request: &MutationRequest,
    origin: &str,
) -> Result<MutationReceipt, CommitError> {
    let token = ConfirmationToken::issue(origin, request, db.revision);
    commit_mutation(db, request, token)
}
