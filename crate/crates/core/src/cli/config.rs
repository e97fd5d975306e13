//! Global settings: command-line flag, then `DF_*` environment variable,
//! then config file (`key = value` lines), then built-in default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const ENV_PREFIX: &str = "DF_";
pub const DEFAULT_CATALOG: &str = "127.0.0.1:7070";
pub const DEFAULT_TIMEOUT_SECONDS: f64 = 30.0;

/// Keys understood in the config file; the environment uses the upper-case
/// name with the `DF_` prefix (`DF_CATALOG`, ...).
pub const KEYS: [&str; 3] = ["catalog", "timeout", "verbosity"];

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub catalog_addr: String,
    pub timeout_seconds: f64,
    pub verbosity: u8,
    pub config_file: Option<PathBuf>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            catalog_addr: DEFAULT_CATALOG.to_owned(),
            timeout_seconds: DEFAULT_TIMEOUT_SECONDS,
            verbosity: 0,
            config_file: None,
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub catalog: Option<String>,
    pub timeout: Option<f64>,
    pub verbosity: Option<u8>,
    pub config: Option<PathBuf>,
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

/// Parse config-file text. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(format!("line {}: unknown key {k:?}", i + 1));
        }
        out.insert(k.to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn load_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config_text(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_timeout(s: &str, origin: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("{origin}: timeout must be a positive number of seconds, got {s:?}")),
    }
}

fn parse_verbosity(s: &str, origin: &str) -> Result<u8, String> {
    s.parse().map_err(|_| format!("{origin}: verbosity must be a small integer, got {s:?}"))
}

impl GlobalConfig {
    /// Merge the layers. `env` looks up a variable by full name.
    pub fn resolve(flags: &Flags, env: impl Fn(&str) -> Option<String>) -> Result<GlobalConfig, String> {
        let config_file = flags.config.clone().or_else(|| env(&env_name("config")).map(PathBuf::from));
        let file = match &config_file {
            Some(p) => load_file(p)?,
            None => BTreeMap::new(),
        };
        // Lowest layer that has a value wins from the top: flag, env, file.
        let layered = |key: &str| -> Option<(String, String)> {
            let name = env_name(key);
            if let Some(v) = env(&name) {
                return Some((v, name));
            }
            file.get(key).map(|v| (v.clone(), format!("config file key {key}")))
        };
        let mut cfg = GlobalConfig { config_file, ..GlobalConfig::default() };
        cfg.catalog_addr = match &flags.catalog {
            Some(v) => v.clone(),
            None => layered("catalog").map(|(v, _)| v).unwrap_or(cfg.catalog_addr),
        };
        cfg.timeout_seconds = match flags.timeout {
            Some(v) => parse_timeout(&v.to_string(), "--timeout")?,
            None => match layered("timeout") {
                Some((v, origin)) => parse_timeout(&v, &origin)?,
                None => cfg.timeout_seconds,
            },
        };
        cfg.verbosity = match flags.verbosity {
            Some(v) => v,
            None => match layered("verbosity") {
                Some((v, origin)) => parse_verbosity(&v, &origin)?,
                None => cfg.verbosity,
            },
        };
        Ok(cfg)
    }

    pub fn from_process(flags: &Flags) -> Result<GlobalConfig, String> {
        Self::resolve(flags, |k| std::env::var(k).ok())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_of(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    #[test]
    fn defaults() {
        let c = GlobalConfig::resolve(&Flags::default(), env_of(&[])).unwrap();
        assert_eq!(c, GlobalConfig::default());
    }

    #[test]
    fn precedence_layers() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("df.conf");
        fs::write(&file, "# site\ncatalog = file:1\ntimeout = 7\nverbosity=1\n").unwrap();
        let file_s = file.to_str().unwrap();

        let only_file = GlobalConfig::resolve(&Flags::default(), env_of(&[("DF_CONFIG", file_s)])).unwrap();
        assert_eq!((only_file.catalog_addr.as_str(), only_file.timeout_seconds, only_file.verbosity), ("file:1", 7.0, 1));

        let env_over =
            GlobalConfig::resolve(&Flags::default(), env_of(&[("DF_CONFIG", file_s), ("DF_CATALOG", "env:2")]))
                .unwrap();
        assert_eq!(env_over.catalog_addr, "env:2");
        assert_eq!(env_over.timeout_seconds, 7.0);

        let flags = Flags { catalog: Some("flag:3".into()), verbosity: Some(3), config: Some(file.clone()), ..Default::default() };
        let flag_over = GlobalConfig::resolve(&flags, env_of(&[("DF_CATALOG", "env:2"), ("DF_TIMEOUT", "2.5")])).unwrap();
        assert_eq!(flag_over.catalog_addr, "flag:3");
        assert_eq!(flag_over.timeout_seconds, 2.5);
        assert_eq!(flag_over.verbosity, 3);
        assert_eq!(flag_over.config_file.as_deref(), Some(file.as_path()));
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(parse_config_text("nonsense").is_err());
        assert!(parse_config_text("colour = red").is_err());
        let e = GlobalConfig::resolve(&Flags::default(), env_of(&[("DF_TIMEOUT", "-1")])).unwrap_err();
        assert!(e.contains("DF_TIMEOUT"), "{e}");
        let missing = Flags { config: Some("/no/such/df.conf".into()), ..Default::default() };
        assert!(GlobalConfig::resolve(&missing, env_of(&[])).is_err());
    }
}
