//! `key=value` configuration files shared by the agent, manager and
//! scenario formats. `#` starts a comment; keys may repeat.

use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Parsed lines: either `key=value` pairs or bare directive lines (words
/// separated by whitespace, e.g. fault-script entries).
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    pairs: Vec<(String, String, usize)>,
    directives: Vec<(Vec<String>, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let key = k.trim();
                    if key.is_empty() || key.contains(char::is_whitespace) {
                        return Err(ConfigError::Syntax { line: i + 1, message: format!("bad key `{key}`") });
                    }
                    kv.pairs.push((key.to_string(), v.trim().to_string(), i + 1));
                }
                None => kv.directives.push((line.split_whitespace().map(String::from).collect(), i + 1)),
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs.iter().filter(move |(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), message: e.to_string() }),
        }
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), message: e.to_string() })
    }

    pub fn directives(&self) -> impl Iterator<Item = (&[String], usize)> {
        self.directives.iter().map(|(w, l)| (w.as_slice(), *l))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, usize)> {
        self.pairs.iter().map(|(k, _, l)| (k.as_str(), *l))
    }
}

/// `host:port`.
pub fn parse_host_port(s: &str) -> Result<(String, u16), String> {
    let (host, port) = s.rsplit_once(':').ok_or_else(|| format!("expected host:port, got `{s}`"))?;
    let port = port.parse().map_err(|_| format!("bad port in `{s}`"))?;
    if host.is_empty() {
        return Err(format!("empty host in `{s}`"));
    }
    Ok((host.to_string(), port))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_directives() {
        let kv = KeyValues::parse("a = 1\n# note\nb=x=y\nkill agent-1 3000 # later\na=2\n").unwrap();
        assert_eq!(kv.get("a"), Some("2"));
        assert_eq!(kv.get_all("a").collect::<Vec<_>>(), ["1", "2"]);
        assert_eq!(kv.get("b"), Some("x=y"));
        let d: Vec<_> = kv.directives().collect();
        assert_eq!(d[0].0, ["kill", "agent-1", "3000"]);
        assert_eq!(kv.parse_or("missing", 7u32).unwrap(), 7);
        assert!(kv.parse_required::<u32>("b").is_err());
        assert!(KeyValues::parse("bad key=1").is_err());
    }

    #[test]
    fn host_port() {
        assert_eq!(parse_host_port("127.0.0.1:80").unwrap(), ("127.0.0.1".into(), 80));
        assert!(parse_host_port("nope").is_err());
    }
}
