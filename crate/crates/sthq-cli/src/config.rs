//! Flat `key=value` run configuration.
//!
//! A run is fully determined by (config, seed). Files are UTF-8 lines of
//! `key=value`; `#` starts a comment. Unknown keys are rejected with the
//! full list of valid keys. Flag-style overrides win over file values, and
//! the effective config is echoed into the run directory so every output
//! is self-describing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
    allowed: Vec<&'static str>,
}

impl KvConfig {
    /// Start from per-command defaults.
    pub fn new(allowed: &[(&'static str, &str)]) -> KvConfig {
        KvConfig {
            values: allowed.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            allowed: allowed.iter().map(|(k, _)| *k).collect(),
        }
    }

    fn check_key(&self, key: &str) -> Result<()> {
        if self.allowed.contains(&key) {
            Ok(())
        } else {
            bail!("invalid config key `{}`; valid keys: {}", key, self.allowed.join(", "))
        }
    }

    pub fn apply_line(&mut self, line: &str) -> Result<()> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(());
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("malformed config line `{line}` (expected key=value)"))?;
        let (k, v) = (k.trim(), v.trim());
        self.check_key(k)?;
        self.values.insert(k.to_string(), v.to_string());
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for line in text.lines() {
            self.apply_line(line)?;
        }
        Ok(())
    }

    /// Apply `key=value` overrides (command-line `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            self.apply_line(o)?;
        }
        Ok(())
    }

    /// The exact effective configuration, sorted, one `key=value` per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn get_str(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.values[key]
            .parse()
            .with_context(|| format!("config key `{key}` = `{}` is not an integer", self.values[key]))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        Ok(self.get_u64(key)? as usize)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.values[key]
            .parse()
            .with_context(|| format!("config key `{key}` = `{}` is not a number", self.values[key]))
    }

    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(self.allowed.contains(&key));
        self.values.insert(key.to_string(), value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_lists_valid_ones() {
        let mut cfg = KvConfig::new(&[("alpha", "1"), ("beta", "2")]);
        let err = cfg.apply_line("gamma=3").unwrap_err().to_string();
        assert!(err.contains("gamma") && err.contains("alpha, beta"));
    }

    #[test]
    fn overrides_win_and_echo_is_sorted() {
        let mut cfg = KvConfig::new(&[("alpha", "1"), ("beta", "2")]);
        cfg.apply_line("beta = 7").unwrap();
        cfg.apply_overrides(&["alpha=9".into()]).unwrap();
        assert_eq!(cfg.echo(), "alpha=9\nbeta=7\n");
    }
}
