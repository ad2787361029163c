//! Replay backend. A script is JSONL with one response per line:
//! `{"episode": "...", "turn": 0, "round": 1, "text": "...", "prompt_sha256": "..."}`.
//! Lines without `episode` serve every episode. Several lines with the same
//! key are returned in file order.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{prompt_sha256, ChatMessage, ChatModel, Completion, LlmError, ScriptKey, ToolSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<String>,
    pub turn: u64,
    pub round: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
}

type Queue = VecDeque<ScriptEntry>;

#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    by_episode: BTreeMap<ScriptKey, Queue>,
    wildcard: BTreeMap<(u64, u32), Queue>,
    /// Compare recorded prompt hashes against the live prompt.
    pub strict: bool,
}

impl ScriptedModel {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut model = ScriptedModel::default();
        for e in entries {
            match &e.episode {
                Some(ep) => model
                    .by_episode
                    .entry(ScriptKey::new(ep, e.turn, e.round))
                    .or_default()
                    .push_back(e),
                None => model.wildcard.entry((e.turn, e.round)).or_default().push_back(e),
            }
        }
        model
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| LlmError::MalformedScript {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    /// Responses not yet consumed.
    pub fn remaining(&self) -> usize {
        self.by_episode.values().chain(self.wildcard.values()).map(VecDeque::len).sum()
    }

    fn pop(&mut self, key: &ScriptKey) -> Option<ScriptEntry> {
        if let Some(e) = self.by_episode.get_mut(key).and_then(VecDeque::pop_front) {
            return Some(e);
        }
        self.wildcard
            .get_mut(&(key.turn, key.round))
            .and_then(VecDeque::pop_front)
    }
}

impl ChatModel for ScriptedModel {
    fn complete(
        &mut self,
        key: &ScriptKey,
        messages: &[ChatMessage],
        _tools: &[ToolSpec],
    ) -> Result<Completion, LlmError> {
        let entry = self.pop(key).ok_or_else(|| LlmError::exhausted(key))?;
        if self.strict {
            if let Some(expected) = &entry.prompt_sha256 {
                let actual = prompt_sha256(messages);
                if &actual != expected {
                    return Err(LlmError::ScriptMismatch {
                        episode: key.episode.clone(),
                        turn: key.turn,
                        round: key.round,
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
        }
        Ok(Completion::Text(entry.text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(turn: u64, round: u32, text: &str) -> ScriptEntry {
        ScriptEntry {
            episode: None,
            turn,
            round,
            text: text.into(),
            prompt_sha256: None,
        }
    }

    #[test]
    fn responses_in_order_then_exhausted() {
        let mut m = ScriptedModel::new(vec![entry(0, 1, "a"), entry(0, 1, "b"), entry(0, 1, "c")]);
        let key = ScriptKey::new("ep", 0, 1);
        let msgs = [ChatMessage::system("s")];
        for want in ["a", "b", "c"] {
            assert_eq!(m.complete(&key, &msgs, &[]).unwrap(), Completion::Text(want.into()));
        }
        assert!(matches!(
            m.complete(&key, &msgs, &[]),
            Err(LlmError::ScriptExhausted { .. })
        ));
    }

    #[test]
    fn episode_entries_take_precedence() {
        let mut special = entry(0, 1, "special");
        special.episode = Some("ep2".into());
        let mut m = ScriptedModel::new(vec![entry(0, 1, "any"), special]);
        let msgs = [ChatMessage::system("s")];
        assert_eq!(
            m.complete(&ScriptKey::new("ep2", 0, 1), &msgs, &[]).unwrap().text(),
            "special"
        );
        assert_eq!(m.complete(&ScriptKey::new("ep2", 0, 1), &msgs, &[]).unwrap().text(), "any");
    }

    #[test]
    fn strict_mode_detects_prompt_drift() {
        let msgs = vec![ChatMessage::system("base prompt"), ChatMessage::user("hi")];
        let mut e = entry(0, 1, "x");
        e.prompt_sha256 = Some(prompt_sha256(&msgs));
        let key = ScriptKey::new("ep", 0, 1);

        let mut ok = ScriptedModel::new(vec![e.clone()]).strict();
        assert!(ok.complete(&key, &msgs, &[]).is_ok());

        let mut drifted = msgs.clone();
        drifted[0].content = "base prompT".into();
        let mut m = ScriptedModel::new(vec![e]).strict();
        assert!(matches!(
            m.complete(&key, &drifted, &[]),
            Err(LlmError::ScriptMismatch { .. })
        ));
    }

    #[test]
    fn jsonl_parsing() {
        let text = "{\"turn\":0,\"round\":1,\"text\":\"a\"}\n\n{\"episode\":\"e\",\"turn\":1,\"round\":1,\"text\":\"b\"}\n";
        let m = ScriptedModel::from_jsonl(text).unwrap();
        assert_eq!(m.remaining(), 2);
        assert!(matches!(
            ScriptedModel::from_jsonl("{\"turn\":0}"),
            Err(LlmError::MalformedScript { line: 1, .. })
        ));
    }
}
