//! Experiment configuration files (JSON, the serde form of
//! [`ExperimentConfig`]).

use std::path::Path;

use cda_core::market::ExperimentConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse { path: String, field: String, line: usize, column: usize, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Invalid { path: String, field: String, message: String },
}

impl ConfigFileError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigFileError::Parse { field, .. } | ConfigFileError::Invalid { field, .. } => Some(field),
            ConfigFileError::Io { .. } => None,
        }
    }
}

/// Parses and validates; errors name the offending field.
pub fn parse_config(text: &str, path: &str) -> Result<ExperimentConfig, ConfigFileError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = match e.path().to_string() {
            p if p == "." => "(root)".to_string(),
            p => p,
        };
        let inner = e.inner();
        ConfigFileError::Parse {
            path: path.into(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    cfg.validate()
        .map_err(|e| ConfigFileError::Invalid { path: path.into(), field: e.field, message: e.message })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigFileError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: shown.clone(), source })?;
    parse_config(&text, &shown)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "zone": "narrow",
        "buyers": { "count": 10, "offer_interval": 200 },
        "target": { "strategy": { "kind": "fm", "markup": 5 }, "offer_interval": 200 },
        "sellers": [ { "strategy": { "kind": "fm", "markup": 0 }, "count": 9, "offer_interval": 200 } ],
        "seed": 3
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = parse_config(GOOD, "x").unwrap();
        assert_eq!(cfg.cycles, 20_000);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.target_id(), Some(10));
    }

    #[test]
    fn negative_interval_names_the_field() {
        let bad = GOOD.replace(r#""count": 9, "offer_interval": 200"#, r#""count": 9, "offer_interval": -200"#);
        let err = parse_config(&bad, "x").unwrap_err();
        assert_eq!(err.field(), Some("sellers[0].offer_interval"));
        assert!(err.to_string().contains("sellers[0].offer_interval"));
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad = GOOD.replace(r#""buyers": { "count": 10, "offer_interval": 200 }"#, r#""buyers": { "count": 10, "offer_interval": 0 }"#);
        let err = parse_config(&bad, "x").unwrap_err();
        assert_eq!(err.field(), Some("buyers.offer_interval"));

        let bad = GOOD.replace("\"seed\": 3", "\"seed\": 3, \"nominal_rates\": { \"buy\": 0.4, \"sell\": 0.1 }");
        assert_eq!(parse_config(&bad, "x").unwrap_err().field(), Some("nominal_rates.buy"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = GOOD.replace("\"seed\": 3", "\"seed\": 3, \"cylces\": 10");
        assert!(matches!(parse_config(&bad, "x").unwrap_err(), ConfigFileError::Parse { .. }));
    }
}
