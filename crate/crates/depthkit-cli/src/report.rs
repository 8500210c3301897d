use anyhow::Context;
use serde::Serialize;
use std::fs;
use std::path::Path;

pub const TOOL_NAME: &str = "depthkit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Envelope shared by every JSON report: tool identity, the subcommand that
/// produced it, the echoed parameters, and the base RNG seed when the command
/// takes one. The command-specific payload flattens into the same object.
/// Matches schemas/report.schema.json.
#[derive(Serialize)]
pub struct Report<P: Serialize, B: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub parameters: P,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub body: B,
}

impl<P: Serialize, B: Serialize> Report<P, B> {
    pub fn new(command: &'static str, parameters: P, seed: Option<u64>, body: B) -> Self {
        Report {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command,
            parameters,
            seed,
            body,
        }
    }
}

/// Serializes `value` as pretty JSON with a trailing newline. Key order
/// follows struct field order, so identical runs write identical bytes.
pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing report {}", path.display()))
}
