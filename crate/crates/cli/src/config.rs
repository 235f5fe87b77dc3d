//! Flat `key = value` config files merged with command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Parses `key = value` lines. `#` starts a comment; dashes in keys are
/// read as underscores.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            anyhow!(
                "line {}: expected `key = value`, got `{}`",
                n + 1,
                raw.trim()
            )
        })?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key `{key}`", n + 1);
        }
    }
    Ok(out)
}

/// Resolves each setting as flag, else file value, else default, and
/// remembers the result for echoing.
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
            resolved: Vec::new(),
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: cannot parse `{v}`: {e}")),
            None => Ok(None),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file);
        self.resolved.push((
            key.to_string(),
            v.as_ref()
                .map_or_else(|| "(none)".to_string(), |v| v.to_string()),
        ));
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, flag)?.ok_or_else(|| {
            anyhow!(
                "missing required setting `{key}` (flag --{} or config key)",
                key.replace('_', "-")
            )
        })
    }

    /// A boolean switch: set by the flag, or by the file when the flag is absent.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = if flag { Some(true) } else { None };
        self.get(key, v, false)
    }

    /// Marks keys as known without resolving them.
    pub fn accept(&mut self, keys: &[&str]) {
        self.used.extend(keys.iter().map(|k| k.to_string()));
    }

    /// Fails on file keys the command does not know; otherwise returns the
    /// resolved settings in resolution order.
    pub fn finish(self, command: &str) -> Result<Vec<(String, String)>> {
        let unknown: Vec<&String> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            bail!(
                "unknown config key(s) for `{command}`: {}",
                names.join(", ")
            );
        }
        Ok(self.resolved)
    }
}
