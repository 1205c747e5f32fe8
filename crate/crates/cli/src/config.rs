//! Config resolution: defaults, then the JSON file, then `--set` overrides,
//! then `--seed`.

use std::path::{Path, PathBuf};

use fuselocate::experiment::ExperimentConfig;
use serde_json::Value;

use crate::error::{CliError, Result};

pub const DEFAULT_OUT: &str = "fuselocate-out";

fn from_value(value: Value, origin: &str) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { String::new() } else { format!(" at `{path}`") };
        CliError::Config(format!("{origin}{at}: {}", e.inner()))
    })
}

/// Replaces the value at a dotted path (`ekf.q_diag.2`); every segment must
/// already exist.
fn set_path(root: &mut Value, key: &str, new: Value) -> Result<()> {
    let unknown = || CliError::Config(format!("--set: unknown key `{key}`"));
    let mut cur = root;
    for seg in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(seg).ok_or_else(unknown)?,
            Value::Array(items) => {
                let i: usize = seg.parse().map_err(|_| unknown())?;
                items.get_mut(i).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    *cur = new;
    Ok(())
}

/// `K=V` where `V` is JSON, or a bare string when it does not parse as JSON.
fn parse_assignment(s: &str) -> Result<(&str, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("--set has an empty key in `{s}`")));
    }
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k, v))
}

pub fn resolve(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io("read", p, e))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            from_value(value, &p.display().to_string())?
        }
        None => ExperimentConfig::default(),
    };
    if !sets.is_empty() {
        let mut value = serde_json::to_value(&cfg).expect("config serializes");
        for s in sets {
            let (k, v) = parse_assignment(s)?;
            set_path(&mut value, k, v)?;
        }
        cfg = from_value(value, "--set")?;
    }
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut names: Vec<&str> = Vec::new();
    for f in &cfg.floors {
        let safe = !f.name.is_empty()
            && f.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !safe {
            return Err(CliError::Config(format!(
                "floor name `{}` must be non-empty and use only letters, digits, `_` and `-`",
                f.name
            )));
        }
        if names.contains(&f.name.as_str()) {
            return Err(CliError::Config(format!("duplicate floor name `{}`", f.name)));
        }
        names.push(&f.name);
    }
    Ok(cfg)
}

/// `--out`, then `FUSELOCATE_OUT` (folded into `--out` by the argument
/// parser), then the config's `output_dir`, then `./fuselocate-out`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = resolve(
            None,
            &sets(&["master_seed=3", "ekf.sigma_wifi=0.5", "ekf.q_diag.2=0.25", "floors.1.name=lobby"]),
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.ekf.sigma_wifi, 0.5);
        assert_eq!(cfg.ekf.q_diag[2], 0.25);
        assert_eq!(cfg.floors[1].name, "lobby");
    }

    #[test]
    fn unknown_keys_and_bad_types_are_config_errors() {
        let err = resolve(None, &sets(&["ekf.sigma_wify=1"]), None).unwrap_err();
        assert!(err.to_string().contains("ekf.sigma_wify"), "{err}");
        let err = resolve(None, &sets(&["ekf.sigma_wifi=abc"]), None).unwrap_err();
        assert!(err.to_string().contains("ekf.sigma_wifi"), "{err}");
        assert!(resolve(None, &sets(&["floors.9.name=x"]), None).is_err());
        assert!(resolve(None, &sets(&["noequals"]), None).is_err());
        assert!(resolve(None, &sets(&["ekf.sigma_wifi=-1"]), None).is_err());
        assert!(resolve(None, &sets(&["floors.0.name=../x"]), None).is_err());
    }

    #[test]
    fn string_values_need_no_quotes() {
        let cfg = resolve(None, &sets(&["radio.layout=uniform_random"]), None).unwrap();
        assert_eq!(cfg.radio.layout, fuselocate::world::ApLayout::UniformRandom);
    }
}
