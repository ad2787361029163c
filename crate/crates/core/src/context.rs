//! Per-round prompt assembly with compression and entity enrichment.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use crate::flow::{FlowInfo, SessionState};
use crate::llm::{ChatMessage, Role, ToolSpec};
use crate::retail::RetailDatabase;
use crate::retail_flows::gate_tools_by_auth;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkingMemory {
    pub base_system_instructions: String,
    /// Every registered tool; gating happens at assembly.
    pub tool_specs: Vec<ToolSpec>,
    pub flow_infos: Vec<FlowInfo>,
    pub trace: Vec<ChatMessage>,
    pub consumed_suggestion_ids: BTreeSet<String>,
}

impl WorkingMemory {
    /// Marks every suggestion currently in the trace or the flow infos as
    /// relayed to the user.
    pub fn consume_suggestions(&mut self) {
        for m in &self.trace {
            for s in &m.suggestions {
                self.consumed_suggestion_ids.insert(s.id.clone());
            }
        }
        for f in &self.flow_infos {
            if let Some(id) = &f.suggestion_id {
                self.consumed_suggestion_ids.insert(id.clone());
            }
        }
    }
}

/// A tool result is pending until an assistant message follows it.
fn pending_from(trace: &[ChatMessage]) -> usize {
    trace
        .iter()
        .rposition(|m| m.role == Role::Assistant)
        .map(|i| i + 1)
        .unwrap_or(0)
}

/// Drops tool results superseded by a later call with byte-equal name and
/// arguments, and suggestions already relayed to the user. System and
/// user messages, assistant messages and pending tool results are kept.
pub fn compress(memory: &WorkingMemory) -> WorkingMemory {
    let pending = pending_from(&memory.trace);
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut keep = vec![true; memory.trace.len()];
    for (i, m) in memory.trace.iter().enumerate().rev() {
        if m.role != Role::Tool {
            continue;
        }
        let Some(key) = m.call_key.as_deref() else {
            continue;
        };
        if !seen.insert(key) && i < pending {
            keep[i] = false;
        }
    }
    let trace = memory
        .trace
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(m, _)| {
            let mut m = m.clone();
            m.suggestions
                .retain(|s| !memory.consumed_suggestion_ids.contains(&s.id));
            m
        })
        .collect();
    WorkingMemory {
        trace,
        ..memory.clone()
    }
}

fn regexes() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"(^|[^0-9A-Za-z#])(\d{10})($|[^0-9])").expect("valid regex"),
            Regex::new(r"(^|[^0-9A-Za-z])(#?W\d{7})($|[^0-9])").expect("valid regex"),
            Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")
                .expect("valid regex"),
        ]
    })
}

/// Entities mentioned in `text`, in order of first appearance.
fn entities(text: &str) -> Vec<(usize, String, char)> {
    let [digits, order, email] = regexes();
    let mut found: Vec<(usize, String, char)> = Vec::new();
    // Matches overlap on their delimiters, so scan with a moving start.
    for (re, kind) in [(digits, 'd'), (order, 'o')] {
        let mut at = 0;
        while let Some(c) = re.captures_at(text, at) {
            let m = c.get(2).expect("group 2");
            found.push((m.start(), m.as_str().to_string(), kind));
            at = m.end();
        }
    }
    for m in email.find_iter(text) {
        found.push((m.start(), m.as_str().to_string(), 'e'));
    }
    found.sort();
    let mut seen = BTreeSet::new();
    found.retain(|(_, s, k)| seen.insert((*k, s.clone())));
    found
}

/// Appends one bracketed line per entity. The original text is kept as a
/// prefix byte for byte; without entities it is returned unchanged.
pub fn enrich(user_message: &str, db: &RetailDatabase) -> String {
    let notes: Vec<String> = entities(user_message)
        .into_iter()
        .map(|(_, e, kind)| match kind {
            'd' => {
                if let Some(p) = db.products.get(&e) {
                    format!("[{e} is the product id of {}]", p.name)
                } else if let Some((p, _)) = db.find_item(&e) {
                    format!("[{e} is the item id of a {} item]", p.name)
                } else {
                    format!("[{e}: not found]")
                }
            }
            'o' => {
                let id = if e.starts_with('#') { e.clone() } else { format!("#{e}") };
                match db.orders.get(&id) {
                    Some(o) => format!(
                        "[order {id}: status {}, {} item(s)]",
                        o.status,
                        o.item_count()
                    ),
                    None => format!("[order {id}: not found]"),
                }
            }
            _ => {
                if db.users.values().any(|u| u.email.eq_ignore_ascii_case(&e)) {
                    format!("[{e} is the email of a registered user]")
                } else {
                    format!("[email {e}: not found]")
                }
            }
        })
        .collect();
    if notes.is_empty() {
        return user_message.to_string();
    }
    format!("{user_message}\n{}", notes.join("\n"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub messages: Vec<ChatMessage>,
    /// Tools visible in this round.
    pub tools: Vec<ToolSpec>,
}

/// System message (base instructions, visible tools, auth instructions,
/// flow infos) followed by the trace. With `acm` the trace is compressed
/// and relayed suggestions are left out; without it the trace is verbatim.
pub fn assemble_prompt(memory: &WorkingMemory, session: &SessionState, acm: bool) -> AssembledPrompt {
    let gated = gate_tools_by_auth(session, &memory.tool_specs);
    let mut system = memory.base_system_instructions.trim_end().to_string();
    system.push_str("\n\n# Tools\n");
    let tools: Vec<String> = gated.tools.iter().map(ToolSpec::render).collect();
    system.push_str(&tools.join("\n"));
    match (&gated.auth_instructions, &session.authenticated_user_id) {
        (Some(auth), _) => {
            system.push_str("\n\n# Authentication\n");
            system.push_str(auth);
        }
        (None, Some(user)) => {
            system.push_str(&format!("\n\n# Session\nAuthenticated user id: {user}"));
        }
        (None, None) => {}
    }
    system.push_str("\n\n# Active flows\n");
    if memory.flow_infos.is_empty() {
        system.push_str("(none)");
    } else {
        let blocks: Vec<String> = memory
            .flow_infos
            .iter()
            .map(|f| {
                let relayed = f
                    .suggestion_id
                    .as_ref()
                    .is_some_and(|id| memory.consumed_suggestion_ids.contains(id));
                if acm && relayed {
                    f.render_body()
                } else {
                    f.render()
                }
            })
            .collect();
        system.push_str(&blocks.join("\n\n"));
    }

    let trace = if acm {
        compress(memory).trace
    } else {
        memory.trace.clone()
    };
    let mut messages = vec![ChatMessage::system(system)];
    messages.extend(trace.iter().map(ChatMessage::flattened));
    AssembledPrompt {
        messages,
        tools: gated.tools,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{render_tool_result, Suggestion, ToolCall, ToolResult};
    use crate::retail_flows::{flow_tool_specs, AUTH_HINT, AUTH_HOW_TO, AUTH_TOOLS};
    use serde_json::json;

    fn tool_msg(name: &str, args: serde_json::Value, body: &str) -> ChatMessage {
        render_tool_result(&ToolCall::new(name, args), &ToolResult::ok(body))
    }

    fn all_specs() -> Vec<ToolSpec> {
        let mut v: Vec<ToolSpec> = AUTH_TOOLS.iter().map(|n| ToolSpec::new(n, "auth", json!({}))).collect();
        v.push(ToolSpec::new("get_order_details", "read", json!({})));
        v.extend(flow_tool_specs());
        v
    }

    #[test]
    fn earlier_identical_result_is_dropped() {
        let args = json!({"product_id": "6938111410"});
        let memory = WorkingMemory {
            trace: vec![
                ChatMessage::user("hi"),
                ChatMessage::assistant("a1"),
                tool_msg("get_product_details", args.clone(), "old"),
                ChatMessage::assistant("a2"),
                tool_msg("get_product_details", args, "new"),
            ],
            ..WorkingMemory::default()
        };
        let c = compress(&memory);
        let bodies: Vec<&str> = c.trace.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(bodies, ["hi", "a1", "a2", "new"]);
        assert_eq!(compress(&c), c);
    }

    #[test]
    fn consumed_suggestion_is_removed() {
        let mut m1 = tool_msg("start_flow", json!({"a": 1}), "started flow_1");
        m1.suggestions.push(Suggestion { id: "flow_1@S".into(), text: "suggested message: A".into() });
        let mut m2 = tool_msg("start_flow", json!({"a": 2}), "started flow_2");
        m2.suggestions.push(Suggestion { id: "flow_2@S".into(), text: "suggested message: B".into() });
        let memory = WorkingMemory {
            trace: vec![ChatMessage::user("u"), ChatMessage::assistant("x"), m1, m2],
            consumed_suggestion_ids: BTreeSet::from(["flow_1@S".to_string()]),
            ..WorkingMemory::default()
        };
        let c = compress(&memory);
        assert!(c.trace[2].suggestions.is_empty());
        assert_eq!(c.trace[3].suggestions.len(), 1);
    }

    #[test]
    fn enrichment() {
        let db = RetailDatabase::seed();
        assert_eq!(
            enrich("I want 6938111410", &db),
            "I want 6938111410\n[6938111410 is the product id of Shoes]"
        );
        assert_eq!(enrich("hello there", &db), "hello there");
        assert_eq!(enrich("#W9999999", &db), "#W9999999\n[order #W9999999: not found]");
        let e = enrich("it's W4967593 and 1234567890, mail mei.kovacs@example.com", &db);
        assert!(e.contains("[order #W4967593: status pending, 4 item(s)]"), "{e}");
        assert!(e.contains("[1234567890: not found]"));
        assert!(e.contains("[mei.kovacs@example.com is the email of a registered user]"));
        assert!(!e.contains("mei_kovacs_8020"));
        assert!(enrich("item 9791469541", &db).contains("is the item id of a Shoes item"));
        assert_eq!(enrich("12345678901 digits", &db), "12345678901 digits");
    }

    #[test]
    fn pre_and_post_auth_prompts() {
        let memory = WorkingMemory {
            base_system_instructions: "You are a retail agent.".into(),
            tool_specs: all_specs(),
            trace: vec![ChatMessage::user("hi")],
            ..WorkingMemory::default()
        };
        let mut session = SessionState::new();
        let pre = assemble_prompt(&memory, &session, true);
        assert_eq!(pre.tools.len(), 2);
        assert!(pre.messages[0].content.contains(AUTH_HINT));
        assert!(pre.messages[0].content.contains(AUTH_HOW_TO));
        assert_eq!(pre, assemble_prompt(&memory, &session, true));

        session.authenticated_user_id = Some("mei_kovacs_8020".into());
        let post = assemble_prompt(&memory, &session, true);
        assert_eq!(post.tools.len(), all_specs().len());
        assert!(!post.messages[0].content.contains(AUTH_HOW_TO));
        assert!(!post.messages[0].content.contains("User not authenticated"));
    }

    #[test]
    fn without_acm_the_trace_is_verbatim() {
        let args = json!({"k": 1});
        let mut t = tool_msg("f", args.clone(), "old");
        t.suggestions.push(Suggestion { id: "s".into(), text: "suggested message: s".into() });
        let memory = WorkingMemory {
            trace: vec![ChatMessage::user("u"), ChatMessage::assistant("a"), t, ChatMessage::assistant("b"), tool_msg("f", args, "new")],
            consumed_suggestion_ids: BTreeSet::from(["s".to_string()]),
            ..WorkingMemory::default()
        };
        let session = SessionState::new();
        let raw = assemble_prompt(&memory, &session, false);
        let want: Vec<ChatMessage> = memory.trace.iter().map(ChatMessage::flattened).collect();
        assert_eq!(raw.messages[1..], want[..]);
        let compressed = assemble_prompt(&memory, &session, true);
        assert!(compressed.messages.len() < raw.messages.len());
    }
}
