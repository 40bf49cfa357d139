//! Versioned instruction templates for every agent role.
//!
//! Templates are configuration: the default set is compiled in from
//! `prompts/v1.json` and can be replaced with a file of the same shape.
//! Placeholders are `{name}`; substitution is a single left-to-right pass, so
//! inserted text is never re-expanded.

use std::path::Path;

use serde::{Deserialize, Serialize};

const DEFAULT_PROMPTS: &str = include_str!("../prompts/v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub base_strategy: String,
    pub strategy_amendments_header: String,
    pub challenger_guided_system: String,
    pub challenger_guided_user: String,
    pub challenger_unguided_system: String,
    pub challenger_unguided_user: String,
    pub answer_system: String,
    pub answer_user: String,
    pub judge_system: String,
    pub judge_user: String,
    pub adapter_content_system: String,
    pub adapter_content_user: String,
    pub adapter_strategy_system: String,
    pub adapter_strategy_user: String,
    pub llm_judge_system: String,
    pub llm_judge_user: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PROMPTS).expect("bundled prompt file is valid")
    }
}

impl PromptSet {
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn render(&self, template: &str, vars: &[(&str, &str)]) -> String {
        render_template(template, vars)
    }
}

pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match value {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
