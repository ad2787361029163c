//! Deterministic retail environment.
//!
//! Read APIs are plain lookups. Every mutation goes through
//! [`validate_mutation`] (a dry-run that never touches the database) and
//! [`commit_mutation`], which requires a [`ConfirmationToken`] matching the
//! exact request.

mod db;
mod model;
mod mutation;

pub use db::{RetailDatabase, Snapshot, UserLookup};
pub use model::{
    is_order_id, is_product_id, is_user_id, Address, LineItem, Money, MoneyParseError, Order,
    OrderStatus, PaymentKind, PaymentMethod, PostDeliveryAction, PostDeliveryDetail, Product,
    ProductItem, User,
};
pub(crate) use mutation::commit_unconfirmed;
pub use mutation::{
    commit_mutation, validate_mutation, CommitError, ConfirmationToken, MutationReceipt,
    MutationRequest, ReasonCode, ValidationReport,
};

/// Seed dataset shipped with the repository.
pub const SEED_DB_JSON: &str = include_str!("../../../../data/retail_db.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetailError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("ambiguous: {0}")]
    Ambiguous(String),
    #[error("malformed database: {0}")]
    Malformed(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(String),
}

impl RetailDatabase {
    pub fn seed() -> RetailDatabase {
        RetailDatabase::from_json(SEED_DB_JSON).expect("seed database is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> RetailDatabase {
        RetailDatabase::seed()
    }

    fn token(req: &MutationRequest) -> ConfirmationToken {
        ConfirmationToken::issue("test", req, 0)
    }

    fn order_with(db: &RetailDatabase, pred: impl Fn(&Order) -> bool) -> Order {
        db.orders.values().find(|o| pred(o)).cloned().expect("fixture order")
    }

    #[test]
    fn email_lookup() {
        let db = db();
        let found = db
            .find_user_id_by_email("mei.kovacs@example.com", false)
            .unwrap();
        assert_eq!(found.user_id, "mei_kovacs_8020");
        assert!(found.orders.is_none());
        assert!(matches!(
            db.find_user_id_by_email("nobody@example.com", false),
            Err(RetailError::NotFound(_))
        ));
    }

    #[test]
    fn email_lookup_with_order_summary() {
        let db = db();
        let found = db
            .find_user_id_by_email("mei.kovacs@example.com", true)
            .unwrap();
        let expected = db.orders_of("mei_kovacs_8020").count();
        let lines = found.orders.unwrap();
        assert_eq!(lines.len(), expected);
        assert!(expected > 0);
        for (line, order) in lines.iter().zip(db.orders_of("mei_kovacs_8020")) {
            assert!(line.starts_with(&order.order_id));
            assert!(line.contains(&format!("status={}", order.status)));
        }
    }

    #[test]
    fn name_zip_lookup() {
        let db = db();
        assert_eq!(
            db.find_user_id_by_name_zip("Mei", "Kovacs", "28236", false)
                .unwrap()
                .user_id,
            "mei_kovacs_8020"
        );
        assert!(matches!(
            db.find_user_id_by_name_zip("Mei", "Kovacs", "00000", false),
            Err(RetailError::NotFound(_))
        ));
        assert!(matches!(
            db.find_user_id_by_name_zip("Sam", "Lee", "10001", false),
            Err(RetailError::Ambiguous(_))
        ));
    }

    #[test]
    fn detail_reads() {
        let db = db();
        let shoes = db.get_product_details("6938111410").unwrap();
        assert_eq!(shoes.name, "Shoes");
        assert!(shoes.items.values().all(|i| i.attributes.contains_key("size")));
        assert!(matches!(
            db.get_order_details("#W0000000"),
            Err(RetailError::NotFound(_))
        ));
        let raw: serde_json::Value = serde_json::from_str(SEED_DB_JSON).unwrap();
        let user = db.get_user_details("mei_kovacs_8020").unwrap();
        assert_eq!(serde_json::to_value(user).unwrap(), raw["users"]["mei_kovacs_8020"]);
    }

    #[test]
    fn cancel_delivered_is_invalid() {
        let db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Delivered);
        let report = validate_mutation(
            &db,
            &MutationRequest::CancelPendingOrder {
                order_id: order.order_id,
                reason: Some("no longer needed".into()),
            },
        );
        assert!(!report.valid);
        assert_eq!(report.reasons, vec![ReasonCode::OrderNotPending]);
    }

    #[test]
    fn cancel_without_reason_asks_for_it() {
        let mut db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let req = MutationRequest::CancelPendingOrder {
            order_id: order.order_id.clone(),
            reason: None,
        };
        let report = validate_mutation(&db, &req);
        assert!(report.valid);
        assert_eq!(report.follow_ups, vec!["reason".to_string()]);
        assert_eq!(report.price_delta, Some(Money::ZERO - order.total()));
        let tok = token(&req);
        assert_eq!(
            commit_mutation(&mut db, &req, tok),
            Err(CommitError::Incomplete(vec!["reason".into()]))
        );
    }

    #[test]
    fn exchange_after_return_is_rejected() {
        let db = db();
        let order = order_with(&db, |o| {
            o.post_delivery_action == Some(PostDeliveryAction::Returned)
        });
        let report = validate_mutation(
            &db,
            &MutationRequest::ExchangeDeliveredOrderItems {
                order_id: order.order_id.clone(),
                item_ids: vec![order.line_items[0].item_id.clone()],
                new_item_ids: vec![order.line_items[0].item_id.clone()],
                payment_method_id: order.payment_method_id.clone(),
            },
        );
        assert!(!report.valid);
        assert!(report.reasons.contains(&ReasonCode::AlreadyReturnedOrExchanged));
    }

    /// Builds a pending order holding a $50 item of a product that also has
    /// an available $80 variant.
    fn fifty_to_eighty() -> (RetailDatabase, MutationRequest) {
        let mut db = db();
        let product_id = "6817146515".to_string();
        let product = db.products.get_mut(&product_id).unwrap();
        let mut items = product.items.values_mut();
        let cheap = items.next().unwrap();
        cheap.price = Money::from_cents(5000);
        cheap.available = true;
        let cheap_id = cheap.item_id.clone();
        let dear = items.next().unwrap();
        dear.price = Money::from_cents(8000);
        dear.available = true;
        let dear_id = dear.item_id.clone();
        let mut order = order_with(&db, |o| o.status == OrderStatus::Pending);
        order.line_items = vec![LineItem {
            item_id: cheap_id.clone(),
            product_id,
            quantity: 1,
            unit_price: Money::from_cents(5000),
        }];
        let req = MutationRequest::ModifyPendingOrderItems {
            order_id: order.order_id.clone(),
            item_ids: vec![cheap_id],
            new_item_ids: vec![dear_id],
            payment_method_id: order.payment_method_id.clone(),
        };
        db.orders.insert(order.order_id.clone(), order);
        (db, req)
    }

    #[test]
    fn modify_items_price_delta() {
        let (db, req) = fifty_to_eighty();
        let report = validate_mutation(&db, &req);
        assert!(report.valid, "{}", report.text());
        assert_eq!(report.price_delta, Some(Money::from_cents(3000)));
        assert!(report.text().contains("Price difference to charge: $30.00"));
    }

    #[test]
    fn modify_items_commit_updates_line_and_revision() {
        let (mut db, req) = fifty_to_eighty();
        let rev = db.revision;
        let tok = token(&req);
        let receipt = commit_mutation(&mut db, &req, tok).unwrap();
        assert_eq!(receipt.amount, Money::from_cents(3000));
        assert_eq!(db.revision, rev + 1);
        let order = db.get_order_details(req.order_id()).unwrap();
        assert_eq!(order.line_items[0].unit_price, Money::from_cents(8000));
    }

    #[test]
    fn dry_run_is_pure() {
        let (db, req) = fifty_to_eighty();
        let before = db.canonical_json();
        let _ = validate_mutation(&db, &req);
        assert_eq!(db.canonical_json(), before);
    }

    #[test]
    fn cancel_commit_stores_reason() {
        let mut db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let req = MutationRequest::CancelPendingOrder {
            order_id: order.order_id.clone(),
            reason: Some("no longer needed".into()),
        };
        let tok = token(&req);
        commit_mutation(&mut db, &req, tok).unwrap();
        let after = db.get_order_details(&order.order_id).unwrap();
        assert_eq!(after.status, OrderStatus::Cancelled);
        assert_eq!(after.cancellation_reason.as_deref(), Some("no longer needed"));
        db.check_integrity().unwrap();
    }

    #[test]
    fn return_twice_fails_second_time() {
        let mut db = db();
        let order = order_with(&db, |o| {
            o.status == OrderStatus::Delivered && o.post_delivery_action.is_none()
        });
        let req = MutationRequest::ReturnDeliveredOrderItems {
            order_id: order.order_id.clone(),
            item_ids: vec![order.line_items[0].item_id.clone()],
            payment_method_id: order.payment_method_id.clone(),
        };
        let tok = token(&req);
        commit_mutation(&mut db, &req, tok).unwrap();
        let tok = token(&req);
        match commit_mutation(&mut db, &req, tok) {
            Err(CommitError::PreconditionChanged(report)) => {
                assert!(report.reasons.contains(&ReasonCode::AlreadyReturnedOrExchanged))
            }
            other => panic!("expected PreconditionChanged, got {other:?}"),
        }
    }

    #[test]
    fn address_change_leaves_lines_untouched() {
        let mut db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let address = Address {
            address1: "1 New Street".into(),
            address2: String::new(),
            city: "Austin".into(),
            state: "TX".into(),
            country: "USA".into(),
            zip: "78701".into(),
        };
        let req = MutationRequest::ModifyPendingOrderAddress {
            order_id: order.order_id.clone(),
            address: address.clone(),
        };
        let before = serde_json::to_string(&order.line_items).unwrap();
        let tok = token(&req);
        commit_mutation(&mut db, &req, tok).unwrap();
        let after = db.get_order_details(&order.order_id).unwrap();
        assert_eq!(after.shipping_address, address);
        assert_eq!(serde_json::to_string(&after.line_items).unwrap(), before);
    }

    #[test]
    fn token_must_match_request() {
        let mut db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let req = MutationRequest::CancelPendingOrder {
            order_id: order.order_id.clone(),
            reason: Some("no longer needed".into()),
        };
        let other = MutationRequest::CancelPendingOrder {
            order_id: order.order_id.clone(),
            reason: Some("ordered by mistake".into()),
        };
        let tok = token(&other);
        assert_eq!(
            commit_mutation(&mut db, &req, tok),
            Err(CommitError::TokenMismatch)
        );
        assert_eq!(db.revision, RetailDatabase::seed().revision);
    }

    #[test]
    fn unknown_payment_method() {
        let db = db();
        let order = order_with(&db, |o| {
            o.status == OrderStatus::Delivered && o.post_delivery_action.is_none()
        });
        let report = validate_mutation(
            &db,
            &MutationRequest::ReturnDeliveredOrderItems {
                order_id: order.order_id.clone(),
                item_ids: vec![order.line_items[0].item_id.clone()],
                payment_method_id: "gift_card_0000000".into(),
            },
        );
        assert_eq!(report.reasons, vec![ReasonCode::PaymentMethodUnknown]);
    }

    #[test]
    fn item_not_in_order() {
        let db = db();
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let report = validate_mutation(
            &db,
            &MutationRequest::ModifyPendingOrderItems {
                order_id: order.order_id.clone(),
                item_ids: vec!["0000000000".into()],
                new_item_ids: vec!["0000000001".into()],
                payment_method_id: order.payment_method_id.clone(),
            },
        );
        assert!(report.reasons.contains(&ReasonCode::ItemNotInOrder));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut db = db();
        let snap = db.snapshot();
        assert_eq!(db.snapshot(), snap);
        let order = order_with(&db, |o| o.status == OrderStatus::Pending);
        let req = MutationRequest::CancelPendingOrder {
            order_id: order.order_id,
            reason: Some("no longer needed".into()),
        };
        let tok = token(&req);
        commit_mutation(&mut db, &req, tok).unwrap();
        assert_ne!(db.canonical_json(), RetailDatabase::seed().canonical_json());
        db.restore(&snap);
        assert_eq!(db.canonical_json(), RetailDatabase::seed().canonical_json());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let db = db();
        let canon = db.canonical_json();
        assert!(!canon.contains('\n'));
        let orders_pos = canon.find("\"orders\"").unwrap();
        let products_pos = canon.find("\"products\"").unwrap();
        let users_pos = canon.find("\"users\"").unwrap();
        assert!(orders_pos < products_pos && products_pos < users_pos);
        assert_eq!(RetailDatabase::from_json(&canon).unwrap(), db);
    }

    #[test]
    fn seed_dataset_shape() {
        let db = db();
        db.check_integrity().unwrap();
        assert!(db.users.len() >= 8);
        assert!(db.products.len() >= 10);
        assert!(db.orders.len() >= 20);
        let puzzle = db
            .products
            .values()
            .find(|p| p.name == "Jigsaw Puzzle")
            .unwrap();
        let attrs: Vec<&String> = puzzle.items.values().next().unwrap().attributes.keys().collect();
        assert_eq!(attrs, ["difficulty level", "pieces", "theme"]);
    }
}
