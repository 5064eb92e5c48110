//! `key = value` config files merged into the command line.
//!
//! Keys are long flag names (`-` and `_` are interchangeable). A value from
//! the file is used only when the flag is absent from the command line.
//! Keys that belong to another subcommand are ignored, so one file can
//! serve the whole pipeline.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Command};

use crate::error::{Error, Result};

pub const CONFIG_ENV: &str = "MIPIN_CONFIG";

pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("{}:{}: expected key = value", origin.display(), n + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Usage(format!("{}:{}: empty key", origin.display(), n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// `--config` from the arguments, else `$MIPIN_CONFIG`.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn given_flags(args: &[OsString]) -> Vec<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect()
}

/// Appends config-file values for every flag of the chosen subcommand that
/// the command line leaves unset.
pub fn merge_config(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let values = parse_config(&text, &path)?;

    let sub_name = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| cmd.get_subcommands().any(|s| s.get_name() == *a));
    let Some(sub) = sub_name.and_then(|n| cmd.find_subcommand(n)) else {
        return Ok(args);
    };
    let given = given_flags(&args);
    let mut out = args;
    for (key, value) in &values {
        if key == "config" {
            continue;
        }
        let arg = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            let known = cmd
                .get_subcommands()
                .flat_map(|s| s.get_arguments())
                .any(|a| a.get_long() == Some(key.as_str()));
            if known {
                log::debug!("config key {key} does not apply to {}", sub.get_name());
                continue;
            }
            return Err(Error::Usage(format!("unknown config key {key:?} in {}", path.display())));
        };
        if given.iter().any(|g| g == key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(Error::Usage(format!("config key {key} expects true or false, got {other:?}")))
                }
            },
            _ => {
                out.push(format!("--{key}").into());
                let multi = arg.get_num_args().is_some_and(|r| r.max_values() > 1);
                if multi {
                    out.extend(value.split_whitespace().map(OsString::from));
                } else {
                    out.push(value.into());
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let m = parse_config("# run\nmask_input = true\n\n lambda=0.01 \n", Path::new("c")).unwrap();
        assert_eq!(m["mask-input"], "true");
        assert_eq!(m["lambda"], "0.01");
        assert!(parse_config("just words\n", Path::new("c")).is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let cmd = Command::new("t")
            .arg(clap::Arg::new("config").long("config").global(true))
            .subcommand(
            Command::new("fit")
                .arg(clap::Arg::new("lambda").long("lambda"))
                .arg(clap::Arg::new("epochs").long("epochs"))
                .arg(clap::Arg::new("unit-init").long("unit-init").action(ArgAction::SetTrue)),
        );
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "lambda = 0.5\nepochs = 3\nunit_init = true\n").unwrap();
        let args: Vec<OsString> = ["t", "fit", "--epochs", "7", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(OsString::from)
            .collect();
        let merged = merge_config(&cmd, args).unwrap();
        let m = cmd.try_get_matches_from(merged).unwrap();
        let (_, sub) = m.subcommand().unwrap();
        assert_eq!(sub.get_one::<String>("epochs").unwrap(), "7");
        assert_eq!(sub.get_one::<String>("lambda").unwrap(), "0.5");
        assert!(sub.get_flag("unit-init"));
    }
}
