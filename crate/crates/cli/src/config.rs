use std::fs;
use std::path::{Path, PathBuf};

use auxspoof::net::NetConfig;
use auxspoof::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    /// Face basis container; the built-in procedural basis when unset.
    pub basis: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

/// Parses the right-hand side of `--set`: any TOML value, or a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `dotted.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{assignment}'")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad key '{key}'")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("'{part}' in '{key}' is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))?;
        cfg.net.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Writes `value` as TOML into `dir/config.toml`.
pub fn echo<S: Serialize>(dir: &Path, value: &S) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Usage(format!("cannot serialize configuration: {e}")))?;
    fs::create_dir_all(dir).map_err(auxspoof::Error::from)?;
    auxspoof::io::container::write_atomic(&dir.join(CONFIG_ECHO), text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.lr=0.01").unwrap();
        apply_override(&mut t, "net.variant=depth-only").unwrap();
        apply_override(&mut t, "net.block_channels=[4, 4]").unwrap();
        let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.net.variant, auxspoof::net::Variant::DepthOnly);
        assert_eq!(cfg.net.block_channels, vec![4, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.learning_rate=0.01").unwrap();
        assert!(toml::Value::Table(t).try_into::<RunConfig>().is_err());
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
