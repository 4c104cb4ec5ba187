//! Layered `key=value` configuration: presets, then a config file, then flags.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use prpde_core::io::{read_key_values, Sidecar};

pub type Map = BTreeMap<String, String>;

/// Prefixes of sidecar keys that a config file may carry but which do not
/// configure anything.
const OUTPUT_PREFIXES: &[&str] = &["meta.", "result."];

pub struct Settings {
    values: Map,
    resolved: RefCell<Map>,
}

impl Settings {
    pub fn layered(known: &[&str], preset: Option<Map>, config: Option<&Path>, flags: Map) -> Result<Self> {
        let mut values = preset.unwrap_or_default();
        if let Some(path) = config {
            let file = read_key_values(path)?;
            for (k, v) in file {
                if OUTPUT_PREFIXES.iter().any(|p| k.starts_with(p)) {
                    continue;
                }
                if !known.contains(&k.as_str()) {
                    bail!("{}: unknown key '{k}' for this command", path.display());
                }
                values.insert(k, v);
            }
        }
        values.extend(flags);
        Ok(Self {
            values,
            resolved: RefCell::new(Map::new()),
        })
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse::<T>().map_err(|e| anyhow!("invalid value '{raw}' for {key}: {e}"))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            Some(raw) => {
                let v = self.parse(key, raw)?;
                self.resolved.borrow_mut().insert(key.into(), raw.clone());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn get<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.borrow_mut().insert(key.into(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn req<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?.with_context(|| format!("missing required setting '{key}'"))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.get(key, false)
    }

    /// Comma separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.opt::<String>(key)? else {
            return Ok(None);
        };
        raw.split(',')
            .map(|t| self.parse(key, t.trim()))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Every setting read so far with its effective value, plus metadata.
    pub fn sidecar(&self, command: &str) -> Sidecar {
        let mut meta = Sidecar::new();
        meta.set("meta.command", command);
        meta.set("meta.version", env!("CARGO_PKG_VERSION"));
        for (k, v) in self.resolved.borrow().iter() {
            meta.set(k.clone(), v);
        }
        meta
    }
}

/// Built-in parameter sets.
pub fn preset(name: &str, command: &str) -> Result<Map> {
    let pairs: &[(&str, &str)] = match (name, command) {
        ("reference", "converge") => &[
            ("rules", "log-sqrt:30,two-cube-root:20,quarter-root:10"),
            ("ns", "2500,5000,10000,20000,40000"),
            ("trials", "10"),
        ],
        ("reference", "alpha-sweep") => &[("k", "10"), ("alphas", "0.01:0.5:8")],
        ("reference", "depth") => &[("k", "10"), ("alpha", "0.05"), ("top", "11")],
        _ => bail!("no preset '{name}' for command '{command}'"),
    };
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

/// Collects command-line flags into a settings map.
#[derive(Default)]
pub struct Flags(pub Map);

impl Flags {
    pub fn put<T: ToString>(&mut self, key: &str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.into(), v.to_string());
        }
        self
    }

    pub fn switch(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.insert(key.into(), "true".into());
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_then_file_then_preset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "k = 7\nalpha = 0.2\nmeta.version = 0\nresult.classes = 2\n").unwrap();
        let mut flags = Flags::default();
        flags.put("alpha", &Some(0.3));
        let s = Settings::layered(&["k", "alpha", "top"], Some(preset("reference", "depth").unwrap()), Some(&cfg), flags.0)
            .unwrap();
        assert_eq!(s.get("k", 0usize).unwrap(), 7);
        assert_eq!(s.get("alpha", 0.0).unwrap(), 0.3);
        assert_eq!(s.get("top", 0usize).unwrap(), 11);
        let meta = s.sidecar("depth");
        assert_eq!(meta.get("alpha"), Some("0.3"));
    }

    #[test]
    fn unknown_file_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(Settings::layered(&["k"], None, Some(&cfg), Map::new()).is_err());
        let s = Settings::layered(&["k"], None, None, [("k".to_string(), "x".to_string())].into()).unwrap();
        assert!(s.get("k", 1usize).is_err());
        assert!(preset("reference", "consistency").is_err());
    }
}
