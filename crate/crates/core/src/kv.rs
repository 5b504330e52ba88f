//! Line-oriented `key=value` text files.
//!
//! Schema files, run configs, and experiment reports all share this format:
//! one `key=value` per line, `#` comments, blank lines ignored. Later keys
//! override earlier ones; insertion order is preserved for writing.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut kv = KvFile::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::MalformedRow {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("expected key=value, got '{trimmed}'"),
                });
            };
            kv.set(key.trim(), value.trim());
        }
        Ok(kv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in &self.entries {
            writeln!(file, "{k}={v}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Set a key, replacing an existing entry in place.
    pub fn set(&mut self, key: &str, value: &str) {
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value.to_string();
        } else {
            self.entries.push((key.to_string(), value.to_string()));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Keys beginning with `prefix`, in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.entries
            .iter()
            .filter(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("key '{key}': cannot parse '{raw}'"))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut kv = KvFile::new();
        kv.set("a", "1");
        kv.set("b", "x");
        kv.set("a", "2");
        assert_eq!(kv.get("a"), Some("2"));
        assert_eq!(kv.entries().len(), 2);
        assert_eq!(kv.parse::<u32>("a").unwrap(), Some(2));
        assert!(kv.parse::<u32>("b").is_err());
        assert_eq!(kv.parse::<u32>("missing").unwrap(), None);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf.cfg");
        let mut kv = KvFile::new();
        kv.set("mode.1.name", "pixels");
        kv.set("mode.1.kind", "dense:256");
        kv.save(&path).unwrap();
        let loaded = KvFile::load(&path).unwrap();
        assert_eq!(loaded.get("mode.1.kind"), Some("dense:256"));
    }
}
