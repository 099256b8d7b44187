//! Scenario files (TOML).

use crate::error::ConfigError;
use crate::sim::Scenario;

/// Parses and validates a scenario. Unknown fields are rejected and errors
/// carry a line/column or the offending field name.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let sc: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((0, 0));
        ConfigError::Parse { line, column, msg: e.message().to_string() }
    })?;
    sc.validate().map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split_whitespace()
            .find(|w| w.contains('.') && w.chars().all(|c| c.is_ascii_alphanumeric() || "._[]".contains(c)))
            .map(|w| w.trim_end_matches(['.', ':']).to_string())
            .unwrap_or_else(|| "scenario".to_string());
        ConfigError::Invalid { field, msg }
    })?;
    Ok(sc)
}

pub fn serialize_scenario(sc: &Scenario) -> String {
    toml::to_string(sc).expect("scenario is always representable")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}
