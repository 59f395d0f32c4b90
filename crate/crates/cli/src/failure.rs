use std::process::ExitCode;

use clan_core::Error;
use serde_json::json;

/// A failed command: configuration problems exit with 2, everything else
/// with 1. Reported as a single JSON line on stderr.
#[derive(Debug)]
pub enum Failure {
    Config { key: String, message: String },
    Runtime { message: String, details: serde_json::Value },
}

impl Failure {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Failure::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure::Runtime {
            message: message.into(),
            details: serde_json::Value::Null,
        }
    }

    pub fn usage(e: &clap::Error) -> Self {
        let key = e
            .get(clap::error::ContextKind::InvalidArg)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "<args>".into());
        let message = e.to_string();
        let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
        Failure::config(key, first)
    }

    pub fn report(&self) -> ExitCode {
        let (line, code) = match self {
            Failure::Config { key, message } => (json!({"error": "config", "key": key, "message": message}), 2),
            Failure::Runtime { message, details } => {
                let mut v = json!({"error": "runtime", "message": message});
                if !details.is_null() {
                    v["details"] = details.clone();
                }
                (v, 1)
            }
        };
        eprintln!("{line}");
        ExitCode::from(code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { key, msg } => Failure::config(key, msg),
            Error::NonFiniteLoss {
                iteration,
                term,
                ref source_indices,
                ref target_indices,
            } => Failure::Runtime {
                message: e.to_string(),
                details: json!({
                    "iteration": iteration,
                    "term": term,
                    "source_indices": source_indices,
                    "target_indices": target_indices,
                }),
            },
            other => Failure::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}
