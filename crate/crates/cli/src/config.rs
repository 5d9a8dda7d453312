//! `key=value` config files. Each key names a long flag of the chosen command;
//! values from the file sit between built-in defaults and the command line.

use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_config(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{source}:{}: expected key=value", idx + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            bail!("{source}:{}: bad key {key:?}", idx + 1);
        }
        if key == "config" {
            bail!("{source}:{}: config files cannot include other config files", idx + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text, &path.display().to_string())
}

/// Rebuild an argument list with the file's flags placed right after the
/// subcommand, ahead of the user's own flags so that those win.
pub fn splice(args: &[String], subcommand: &str, entries: &[(String, String)]) -> Vec<String> {
    let at = args
        .iter()
        .skip(1)
        .position(|a| a == subcommand)
        .map(|p| p + 2)
        .unwrap_or(args.len());
    let mut out = args[..at].to_vec();
    for (k, v) in entries {
        out.push(format!("--{k}={v}"));
    }
    out.extend_from_slice(&args[at..]);
    out
}
