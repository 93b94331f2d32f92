//! Flat `key = value` configuration files. `#` starts a comment; keys may
//! appear at most once.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CfgError {
    #[error("config line {0}: expected 'key = value', got '{1}'")]
    Syntax(usize, String),
    #[error("config: duplicate key '{0}'")]
    Duplicate(String),
    #[error("config key '{key}': cannot parse '{value}' ({details})")]
    Parse { key: String, value: String, details: String },
    #[error("config: unknown key '{0}'")]
    Unknown(String),
}

#[derive(Clone, Debug, Default)]
pub struct KvFile {
    map: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, CfgError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CfgError::Syntax(i + 1, raw.trim().to_string()))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CfgError::Duplicate(key));
            }
        }
        Ok(KvFile { map })
    }

    pub fn from_pairs(pairs: &[(&str, String)]) -> Self {
        KvFile { map: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Parse a value, falling back to a default when the key is absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CfgError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| CfgError::Parse {
                key: key.to_string(),
                value: v.clone(),
                details: e.to_string(),
            }),
        }
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CfgError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.map.get(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                item.trim().parse().map_err(|e: T::Err| CfgError::Parse {
                    key: key.to_string(),
                    value: item.trim().to_string(),
                    details: e.to_string(),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// Error on any key outside the allowed set (catches typos).
    pub fn check_known(&self, allowed: &[&str]) -> Result<(), CfgError> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(CfgError::Unknown(k.clone()));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let kv = KvFile::parse("a = 1\n# comment\nb = hello  # trailing\n\nc=2.5\n").unwrap();
        assert_eq!(kv.get_or("a", 0i32).unwrap(), 1);
        assert_eq!(kv.raw("b"), Some("hello"));
        assert_eq!(kv.get_or("c", 0.0f64).unwrap(), 2.5);
        assert_eq!(kv.get_or("missing", 7u32).unwrap(), 7);
    }

    #[test]
    fn duplicate_and_syntax_errors() {
        assert!(matches!(KvFile::parse("a = 1\na = 2\n"), Err(CfgError::Duplicate(_))));
        assert!(matches!(KvFile::parse("nonsense\n"), Err(CfgError::Syntax(1, _))));
    }

    #[test]
    fn unknown_key_detection() {
        let kv = KvFile::parse("epochs = 10\ntypo_key = 3\n").unwrap();
        assert!(kv.check_known(&["epochs"]).is_err());
        assert!(kv.check_known(&["epochs", "typo_key"]).is_ok());
    }

    #[test]
    fn list_values() {
        let kv = KvFile::parse("snrs = 3.0, 0.0, 1.5\n").unwrap();
        assert_eq!(kv.get_list::<f64>("snrs").unwrap().unwrap(), vec![3.0, 0.0, 1.5]);
        assert_eq!(kv.get_list::<f64>("absent").unwrap(), None);
    }
}
