//! Config file support. Keys mirror long flags (`small_set_fallback` or
//! `small-set-fallback` for `--small-set-fallback`). Top-level keys apply to
//! any subcommand that has the flag; a `[subcommand]` table applies to that
//! subcommand only and must not contain unknown keys. Values are injected as
//! flags right after the subcommand, so flags typed on the command line win.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{bail, Context};
use clap::{ArgAction, Command};

fn config_path(argv: &[String]) -> Option<String> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        if arg == "--" {
            return None;
        }
        if arg == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = arg.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn scalar(value: &toml::Value) -> anyhow::Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Datetime(d) => d.to_string(),
        other => bail!("unsupported value {other}"),
    })
}

pub fn inject(command: &Command, argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {path}"))?;

    let mut command = command.clone();
    command.build();
    let sub_names: Vec<String> = command.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(position) = argv.iter().position(|a| sub_names.contains(a)) else {
        return Ok(argv);
    };
    let sub_name = argv[position].clone();
    let sub = command.find_subcommand(&sub_name).expect("listed subcommand");

    let mut flags: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for arg in sub.get_arguments() {
        if let Some(long) = arg.get_long() {
            if long == "config" || long == "help" || long == "version" {
                continue;
            }
            let is_switch = matches!(arg.get_action(), ArgAction::SetTrue);
            let is_multi = matches!(arg.get_action(), ArgAction::Append);
            flags.insert(long.to_string(), (is_switch, is_multi));
        }
    }

    let mut settings: BTreeMap<String, toml::Value> = BTreeMap::new();
    for (key, value) in &table {
        if value.is_table() {
            continue;
        }
        let long = key.replace('_', "-");
        if flags.contains_key(&long) {
            settings.insert(long, value.clone());
        }
    }
    if let Some(section) = table.get(&sub_name) {
        let section = section.as_table().with_context(|| format!("[{sub_name}] must be a table"))?;
        for (key, value) in section {
            let long = key.replace('_', "-");
            if !flags.contains_key(&long) {
                bail!("config key {key:?} is not a flag of `{sub_name}`");
            }
            settings.insert(long, value.clone());
        }
    }

    let mut injected = Vec::new();
    for (long, value) in settings {
        let (is_switch, is_multi) = flags[&long];
        match value {
            toml::Value::Boolean(b) if is_switch => {
                if b {
                    injected.push(format!("--{long}"));
                }
            }
            toml::Value::Array(items) if is_multi => {
                for item in &items {
                    injected.push(format!("--{long}={}", scalar(item)?));
                }
            }
            other if !is_switch => injected.push(format!("--{long}={}", scalar(&other)?)),
            other => bail!("config key {long:?} expects true/false, got {other}"),
        }
    }
    let mut out = argv;
    out.splice(position + 1..position + 1, injected);
    Ok(out)
}
