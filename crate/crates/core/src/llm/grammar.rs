//! Text encoding of agent decisions:
//!
//! ```text
//! THOUGHT: <free text, may span lines>
//! ACTIONS:
//! [{"name": "...", "arguments": {...}}, ...]
//! ```
//!
//! or a final line group starting with `RESPOND: <message>`.

use regex::Regex;
use serde_json::Value;

use super::{Action, AgentDecision, MalformedOutput, ToolCall};

const THOUGHT: &str = "THOUGHT:";
const ACTIONS: &str = "ACTIONS:";
const RESPOND: &str = "RESPOND: ";

pub fn parse_agent_output(text: &str) -> Result<AgentDecision, MalformedOutput> {
    let bad = |m: &str| Err(MalformedOutput(m.to_string()));
    let body = text.trim_start();
    let Some(rest) = body.strip_prefix(THOUGHT) else {
        return bad("output must start with \"THOUGHT: \"");
    };
    let rest = rest.strip_prefix(' ').unwrap_or(rest);

    let mut thought_lines: Vec<&str> = Vec::new();
    let mut lines = rest.split('\n');
    // The first segment is the remainder of the THOUGHT line.
    if let Some(first) = lines.next() {
        if let Some(msg) = first.strip_prefix(RESPOND) {
            return respond(String::new(), msg, lines);
        }
        thought_lines.push(first);
    }
    while let Some(line) = lines.next() {
        let trimmed = line.strip_suffix('\r').unwrap_or(line);
        if trimmed == ACTIONS {
            let json: Vec<&str> = lines.collect();
            let calls = parse_actions(&json.join("\n"))?;
            return Ok(AgentDecision {
                thought: thought_lines.join("\n"),
                action: Action::Actions { calls },
            });
        }
        if let Some(msg) = line.strip_prefix(RESPOND) {
            return respond(thought_lines.join("\n"), msg, lines);
        }
        thought_lines.push(line);
    }
    bad("expected a line \"ACTIONS:\" or a line starting with \"RESPOND: \"")
}

fn respond<'a>(
    thought: String,
    first: &str,
    rest: impl Iterator<Item = &'a str>,
) -> Result<AgentDecision, MalformedOutput> {
    let mut message = first.to_string();
    for line in rest {
        message.push('\n');
        message.push_str(line);
    }
    let trimmed = message.trim_end();
    if trimmed.trim().is_empty() {
        return Err(MalformedOutput("RESPOND message is empty".into()));
    }
    Ok(AgentDecision {
        thought,
        action: Action::Respond {
            message: trimmed.to_string(),
        },
    })
}

fn parse_actions(body: &str) -> Result<Vec<ToolCall>, MalformedOutput> {
    let body = body.trim();
    let value = match serde_json::from_str::<Value>(body) {
        Ok(v) => v,
        Err(first_err) => repaired(body).ok_or_else(|| {
            MalformedOutput(format!("ACTIONS body is not a JSON array: {first_err}"))
        })?,
    };
    let Value::Array(items) = value else {
        return Err(MalformedOutput("ACTIONS body must be a JSON array".into()));
    };
    if items.is_empty() {
        return Err(MalformedOutput("ACTIONS list is empty".into()));
    }
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(mut obj) = item else {
                return Err(MalformedOutput(format!("action {i} is not an object")));
            };
            let name = match obj.remove("name") {
                Some(Value::String(n)) if !n.is_empty() => n,
                _ => return Err(MalformedOutput(format!("action {i} has no string \"name\""))),
            };
            let arguments = match obj.remove("arguments") {
                None | Some(Value::Null) => serde_json::Map::new(),
                Some(Value::Object(m)) => m,
                Some(_) => {
                    return Err(MalformedOutput(format!(
                        "action {i} \"arguments\" must be an object"
                    )))
                }
            };
            if let Some(extra) = obj.keys().next() {
                return Err(MalformedOutput(format!("action {i} has unexpected key {extra:?}")));
            }
            Ok(ToolCall {
                name,
                arguments,
                id: None,
            })
        })
        .collect()
}

/// Fixes exactly one trailing comma or one unquoted key, if that is the
/// only defect.
fn repaired(body: &str) -> Option<Value> {
    let trailing_comma = Regex::new(r",(\s*[\]}])").expect("valid regex");
    let unquoted_key = Regex::new(r"([{,]\s*)([A-Za-z_][A-Za-z0-9_]*)(\s*:)").expect("valid regex");
    let candidates = [
        trailing_comma.replacen(body, 1, "$1").into_owned(),
        unquoted_key.replacen(body, 1, "$1\"$2\"$3").into_owned(),
    ];
    candidates
        .iter()
        .filter(|c| c.as_str() != body)
        .find_map(|c| serde_json::from_str(c).ok())
}

/// Inverse of [`parse_agent_output`] for decisions whose thought contains
/// no grammar marker lines.
pub fn serialize_agent_decision(decision: &AgentDecision) -> String {
    match &decision.action {
        Action::Actions { calls } => {
            let items: Vec<Value> = calls
                .iter()
                .map(|c| serde_json::json!({"name": c.name, "arguments": c.arguments}))
                .collect();
            format!(
                "THOUGHT: {}\nACTIONS:\n{}",
                decision.thought,
                Value::Array(items)
            )
        }
        Action::Respond { message } => {
            format!("THOUGHT: {}\nRESPOND: {message}", decision.thought)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calls(d: &AgentDecision) -> &[ToolCall] {
        match &d.action {
            Action::Actions { calls } => calls,
            Action::Respond { .. } => panic!("expected actions"),
        }
    }

    #[test]
    fn single_action() {
        let d = parse_agent_output(
            "THOUGHT: x\nACTIONS:\n[{\"name\":\"get_order_details\",\"arguments\":{\"order_id\":\"#W2702727\"}}]",
        )
        .unwrap();
        assert_eq!(d.thought, "x");
        let c = calls(&d);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].name, "get_order_details");
        assert_eq!(c[0].arguments["order_id"], "#W2702727");
    }

    #[test]
    fn respond() {
        let d = parse_agent_output("THOUGHT: done\nRESPOND: Your order is cancelled.").unwrap();
        assert_eq!(d.thought, "done");
        assert_eq!(
            d.action,
            Action::Respond {
                message: "Your order is cancelled.".into()
            }
        );
    }

    #[test]
    fn four_calls_keep_order() {
        let ids = ["6938111410", "1808611083", "6817146515", "2524789262"];
        let body: Vec<String> = ids
            .iter()
            .map(|p| format!("{{\"name\":\"find_product_items\",\"arguments\":{{\"product_id\":\"{p}\"}}}}"))
            .collect();
        let text = format!("THOUGHT: search\nline two\nACTIONS:\n[{}]", body.join(",\n"));
        let d = parse_agent_output(&text).unwrap();
        assert_eq!(d.thought, "search\nline two");
        let got: Vec<&str> = calls(&d)
            .iter()
            .map(|c| c.arguments["product_id"].as_str().unwrap())
            .collect();
        assert_eq!(got, ids);
    }

    #[test]
    fn one_defect_is_repaired() {
        let comma = "THOUGHT: t\nACTIONS:\n[{\"name\":\"a\",\"arguments\":{}},]";
        assert_eq!(calls(&parse_agent_output(comma).unwrap())[0].name, "a");
        let key = "THOUGHT: t\nACTIONS:\n[{name:\"a\",\"arguments\":{}}]";
        assert_eq!(calls(&parse_agent_output(key).unwrap())[0].name, "a");
    }

    #[test]
    fn two_defects_are_rejected() {
        let both = "THOUGHT: t\nACTIONS:\n[{name:\"a\",\"arguments\":{}},]";
        assert!(parse_agent_output(both).is_err());
    }

    #[test]
    fn malformed_inputs() {
        for text in [
            "",
            "hello",
            "THOUGHT: nothing else",
            "THOUGHT: t\nACTIONS:\n[]",
            "THOUGHT: t\nACTIONS:\n{\"name\":\"a\"}",
            "THOUGHT: t\nACTIONS:\n[{\"arguments\":{}}]",
            "THOUGHT: t\nRESPOND:  ",
        ] {
            assert!(parse_agent_output(text).is_err(), "{text:?}");
        }
    }

    fn arb_thought() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z0-9 ,.'\"{}]{0,20}", 1..4)
            .prop_map(|lines| lines.join("\n"))
            .prop_filter("no marker lines", |t| {
                t.split('\n').all(|l| l != ACTIONS && !l.starts_with(RESPOND))
            })
    }

    fn arb_decision() -> impl Strategy<Value = AgentDecision> {
        let call = ("[a-z_]{1,12}", prop::collection::btree_map("[a-z_]{1,6}", "[ -~]{0,8}", 0..3))
            .prop_map(|(name, args)| ToolCall {
                name,
                arguments: args.into_iter().map(|(k, v)| (k, Value::String(v))).collect(),
                id: None,
            });
        let action = prop_oneof![
            prop::collection::vec(call, 1..5).prop_map(|calls| Action::Actions { calls }),
            "[a-zA-Z0-9][a-zA-Z0-9 .!?]{0,30}[a-zA-Z0-9.!?]"
                .prop_map(|message| Action::Respond { message }),
        ];
        (arb_thought(), action).prop_map(|(thought, action)| AgentDecision { thought, action })
    }

    proptest! {
        #[test]
        fn round_trip(d in arb_decision()) {
            let text = serialize_agent_decision(&d);
            prop_assert_eq!(parse_agent_output(&text).unwrap(), d);
        }
    }
}
