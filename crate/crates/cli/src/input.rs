//! Reading data files and JSON/TOML configs with located errors.

use std::fmt;
use std::path::Path;

use predstop_core::ModelSpec;
use serde::de::DeserializeOwned;

/// Malformed user input. Maps to exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub message: String,
}

impl InputError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for InputError {}

fn read(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|e| InputError::new(format!("{}: {e}", path.display())))
}

/// One observation per line. Blank lines and lines starting with '#' are
/// skipped. Returns values with their 1-based line numbers.
pub fn parse_data(text: &str, origin: &str) -> Result<Vec<(usize, f64)>, InputError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push((i + 1, v)),
            _ => return Err(InputError::new(format!("{origin}:{}: not a finite number: '{t}'", i + 1))),
        }
    }
    Ok(out)
}

/// Read a data file and check each value against the model.
pub fn load_data(path: &Path, model: &ModelSpec) -> Result<Vec<f64>, InputError> {
    let origin = path.display().to_string();
    let rows = parse_data(&read(path)?, &origin)?;
    for (idx, &(line, v)) in rows.iter().enumerate() {
        if let Err(e) = model.check_observation(idx, v) {
            return Err(InputError::new(format!("{origin}:{line}: {e}")));
        }
    }
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

/// Parse JSON, or TOML when `origin` ends in `.toml`.
pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, InputError> {
    if origin.ends_with(".toml") {
        toml::from_str(text).map_err(|e| {
            let loc = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                    format!(":{line}:{col}")
                })
                .unwrap_or_default();
            InputError::new(format!("{origin}{loc}: {}", e.message()))
        })
    } else {
        serde_json::from_str(text).map_err(|e| InputError::new(format!("{origin}:{}:{}: {e}", e.line(), e.column())))
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, InputError> {
    parse_config(&read(path)?, &path.display().to_string())
}
