//! Config files: a flat JSON object or `key=value` lines whose entries are
//! expanded into flags placed before the command-line ones, so explicit
//! flags win.

use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// Rewrites `argv` so that entries of any `--config` file come right after
/// the subcommand name.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    let flags = to_flags(&text, Path::new(&path))?;
    // argv[0] is the program, argv[1] the subcommand
    let split = argv.len().min(2);
    let mut out: Vec<String> = argv[..split].to_vec();
    out.extend(flags);
    out.extend(argv[split..].iter().cloned());
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(2);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn to_flags(text: &str, path: &Path) -> Result<Vec<String>, CliError> {
    let pairs = if text.trim_start().starts_with('{') {
        json_pairs(text, path)?
    } else {
        kv_pairs(text, path)?
    };
    let mut flags = Vec::new();
    for (key, value) in pairs {
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(CliError::Usage(format!("{}: config files cannot nest", path.display())));
        }
        match value.as_str() {
            "false" => {}
            "true" => flags.push(format!("--{key}")),
            _ => {
                flags.push(format!("--{key}"));
                flags.push(value);
            }
        }
    }
    Ok(flags)
}

fn json_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let doc: serde_json::Map<String, Value> =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    doc.into_iter()
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s,
                Value::Bool(b) => b.to_string(),
                Value::Number(n) => n.to_string(),
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: value of {k} must be a scalar or a list, got {other}",
                        path.display()
                    )))
                }
            };
            Ok((k, s))
        })
        .collect()
}

fn kv_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
