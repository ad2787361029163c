//! Settings file and ablation parsing. Flags and environment variables are
//! resolved by clap; the file only fills what both left unset.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use smag_core::agent::AblationConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub db: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub scripts: Option<PathBuf>,
    pub runs: Option<usize>,
    pub ablation: Option<String>,
    #[serde(default)]
    pub llm: LlmSettings,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub native_tools: Option<bool>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(FileSettings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Comma-separated: `full` or `baseline` resets every feature, a feature
/// name turns it on and `no-<feature>` turns it off. Features: `mfc`,
/// `llm`, `read`, `smag`, `acm`. Tokens apply left to right on top of
/// `full`.
pub fn parse_ablation(spec: &str) -> Result<AblationConfig, String> {
    let mut c = AblationConfig::default();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "full" => c = AblationConfig::default(),
            "baseline" => c = AblationConfig::baseline(),
            _ => {
                let (on, name) = match token.strip_prefix("no-") {
                    Some(n) => (false, n),
                    None => (true, token),
                };
                let flag = match name {
                    "mfc" | "multi_function_calls" => &mut c.multi_function_calls,
                    "llm" | "llm_powered_tools" => &mut c.llm_powered_tools,
                    "read" | "optimized_read_tools" => &mut c.optimized_read_tools,
                    "smag" => &mut c.smag,
                    "acm" => &mut c.acm,
                    other => return Err(format!("unknown ablation feature {other:?}")),
                };
                *flag = on;
            }
        }
    }
    Ok(c)
}
