//! Sectioned key=value config files. `#` starts a comment; keys live
//! under the most recent `[section]` header. Lookups report missing or
//! malformed entries by their `section.key` path.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            if current.is_empty() {
                return Err(ConfigError(format!(
                    "line {}: key `{}` appears before any [section] header",
                    lineno + 1,
                    key.trim()
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Result<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
            .ok_or_else(|| ConfigError(format!("missing key {section}.{key}")))
    }

    pub fn get_opt(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, section: &str, key: &str, what: &str) -> Result<T> {
        let raw = self.get(section, key)?;
        raw.parse().map_err(|_| {
            ConfigError(format!("{section}.{key}: `{raw}` is not {what}"))
        })
    }

    fn typed_or<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        what: &str,
        default: T,
    ) -> Result<T> {
        match self.get_opt(section, key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                ConfigError(format!("{section}.{key}: `{raw}` is not {what}"))
            }),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        self.typed(section, key, "a nonnegative integer")
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.typed_or(section, key, "a nonnegative integer", default)
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64> {
        self.typed(section, key, "a nonnegative integer")
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.typed_or(section, key, "a real number", default)
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        self.typed_or(section, key, "true or false", default)
    }

    pub fn usize_list_or(
        &self,
        section: &str,
        key: &str,
        default: &[usize],
    ) -> Result<Vec<usize>> {
        match self.get_opt(section, key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        ConfigError(format!(
                            "{section}.{key}: `{p}` is not a nonnegative integer"
                        ))
                    })
                })
                .collect(),
        }
    }
}
