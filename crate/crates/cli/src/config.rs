//! INI run configuration merged under command-line flags.
//!
//! Sections are named after subcommands (`[train-agcm]`, ...) plus
//! `[global]`, whose keys are `seed`, `threads` and `deterministic`. Keys
//! are long flag names. Config values are spliced into the argument list
//! ahead of the user's own flags and every subcommand overrides repeated
//! flags, so the command line always wins.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};
use ini::Ini;

use crate::error::{config_err, CliError, CliResult};

const GLOBAL: &str = "global";
/// Global options that take a value.
const GLOBAL_VALUED: [&str; 2] = ["--config", "--threads"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Position of the subcommand token in `args`.
fn subcommand_index(args: &[OsString], root: &Command) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            return root.find_subcommand(s.as_ref()).map(|_| i);
        }
        i += 1;
    }
    None
}

fn parse_bool(section: &str, key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(config_err(format!("[{section}] {key}: expected true or false, got `{other}`"))),
    }
}

fn user_gave(user: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    user.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

/// Flags for one section; `user` holds the user's own subcommand flags.
fn section_args(cmd: &Command, section: &str, props: &ini::Properties, user: &[OsString]) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in props.iter() {
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key))
            .ok_or_else(|| config_err(format!("unknown key `{key}` in section [{section}]")))?;
        match arg.get_action() {
            ArgAction::SetTrue => {
                if parse_bool(section, key, value)? {
                    out.push(format!("--{key}").into());
                }
            }
            // Repeatable flags accumulate, so the command line replaces the
            // whole config list instead of extending it.
            ArgAction::Append => {
                if !user_gave(user, key) {
                    for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                        out.push(format!("--{key}={v}").into());
                    }
                }
            }
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    Ok(out)
}

/// The user's arguments with config values spliced in ahead of them.
pub fn merged_args(args: Vec<OsString>, root: &Command) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let ini = Ini::load_from_file(path).map_err(|e| match e {
        ini::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        ini::Error::Parse(p) => config_err(format!("{}: {p}", path.display())),
    })?;
    let sub_at = subcommand_index(&args, root);
    let sub_name = sub_at.map(|i| args[i].to_string_lossy().into_owned());
    let user_sub: &[OsString] = match sub_at {
        Some(i) => &args[i + 1..],
        None => &[],
    };

    let mut global_args: Vec<OsString> = Vec::new();
    let mut sub_args = Vec::new();
    let mut global_seed = None;
    for (section, props) in ini.iter() {
        let Some(section) = section else {
            if let Some((k, _)) = props.iter().next() {
                return Err(config_err(format!("key `{k}` outside any section")));
            }
            continue;
        };
        if section == GLOBAL {
            for (k, v) in props.iter() {
                match k {
                    "threads" => global_args.push(format!("--threads={v}").into()),
                    "deterministic" => {
                        if parse_bool(section, k, v)? {
                            global_args.push("--deterministic".into());
                        }
                    }
                    "seed" => {
                        v.parse::<u64>()
                            .map_err(|_| config_err(format!("[global] seed: `{v}` is not an unsigned integer")))?;
                        global_seed = Some(v.to_string());
                    }
                    other => return Err(config_err(format!("unknown key `{other}` in section [global]"))),
                }
            }
            continue;
        }
        let cmd = root
            .find_subcommand(section)
            .ok_or_else(|| config_err(format!("unknown section [{section}]")))?;
        // Unused sections are still checked.
        let parsed = section_args(cmd, section, props, user_sub)?;
        if sub_name.as_deref() == Some(section) {
            sub_args = parsed;
        }
    }
    if let (Some(seed), Some(name)) = (global_seed, sub_name.as_deref()) {
        let cmd = root.find_subcommand(name).expect("subcommand exists");
        let takes_seed = cmd.get_arguments().any(|a| a.get_long() == Some("seed"));
        let section_sets = ini.section(Some(name)).is_some_and(|p| p.contains_key("seed"));
        if takes_seed && !section_sets {
            sub_args.insert(0, format!("--seed={seed}").into());
        }
    }

    let mut out = vec![args[0].clone()];
    out.extend(global_args);
    match sub_at {
        Some(i) => {
            out.extend(args[1..=i].iter().cloned());
            out.extend(sub_args);
            out.extend(args[i + 1..].iter().cloned());
        }
        None => out.extend(args[1..].iter().cloned()),
    }
    Ok(out)
}
