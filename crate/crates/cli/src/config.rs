//! Flags from a TOML file.
//!
//! Each table is named after a command and holds its long flags with `_` or
//! `-` separators:
//!
//! ```toml
//! [train]
//! arch = "hred"
//! hidden = 64
//! clip = 5.0
//! ```
//!
//! Values are spliced in right after the command name, so flags given on the
//! command line win. Keys whose environment variable is set are skipped.

use std::ffi::OsString;
use std::path::Path;

pub fn load(path: &Path) -> Result<toml::Table, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        other => Err(format!("config key `{key}` has unsupported value {other}")),
    }
}

/// Flags for `command` from `table`, as command-line arguments.
pub fn flags(table: &toml::Table, command: &str, env_bound: &[(&str, &str)]) -> Result<Vec<OsString>, String> {
    let Some(section) = table.get(command) else {
        return Ok(Vec::new());
    };
    let section = section
        .as_table()
        .ok_or_else(|| format!("config entry `{command}` must be a table"))?;
    let mut out = Vec::new();
    for (key, value) in section {
        let name = key.replace('_', "-");
        if env_bound
            .iter()
            .any(|(k, var)| *k == name && std::env::var_os(var).is_some())
        {
            continue;
        }
        let flag = format!("--{name}");
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                for item in items {
                    out.push(format!("{flag}={}", scalar(key, item)?).into());
                }
            }
            v => out.push(format!("{flag}={}", scalar(key, v)?).into()),
        }
    }
    Ok(out)
}

/// Inserts `extra` after the first occurrence of `command` in `args`.
pub fn splice(mut args: Vec<OsString>, command: &str, extra: Vec<OsString>) -> Vec<OsString> {
    if let Some(at) = args.iter().skip(1).position(|a| a == command) {
        let at = at + 2;
        args.splice(at..at, extra);
    }
    args
}
