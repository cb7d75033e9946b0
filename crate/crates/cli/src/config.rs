//! Flat `key = value` config files.
//!
//! Entries become `SHAPEMARK_*` environment defaults before argument
//! parsing, so the precedence is flag, then environment, then file.

use std::collections::BTreeSet;
use std::path::Path;

use clap::CommandFactory;

use crate::Cli;

pub const ENV_PREFIX: &str = "SHAPEMARK_";

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('-', "_"))
}

fn known_keys() -> BTreeSet<String> {
    let cmd = Cli::command();
    cmd.get_arguments()
        .chain(cmd.get_subcommands().flat_map(|s| s.get_arguments()))
        .filter(|a| a.get_env().is_some())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

/// Parses `text` into `(key, value)` pairs, rejecting unknown keys.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let known = known_keys();
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", no + 1))?;
        let key = k.trim().replace('_', "-");
        if !known.contains(&key) {
            return Err(format!("config line {}: unknown key {key:?}", no + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Locates `--config PATH` (or `--config=PATH`) in raw arguments, falling
/// back to `SHAPEMARK_CONFIG`.
pub fn find_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    std::env::var(env_name("config")).ok()
}

/// Loads the file at `path` and exports its entries as environment
/// defaults, leaving variables that are already set untouched.
pub fn apply(path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    for (key, value) in parse(&text)? {
        let name = env_name(&key);
        if std::env::var_os(&name).is_none() {
            std::env::set_var(name, value);
        }
    }
    Ok(())
}
