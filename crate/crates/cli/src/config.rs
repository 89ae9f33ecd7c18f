//! `key = value` configuration files, flag/file resolution and run manifests.
//!
//! A manifest is itself a valid configuration file for the subcommand that
//! wrote it, so `subforest <cmd> --config out.csv.manifest` reruns the exact
//! same computation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Keys every manifest carries in addition to the subcommand's parameters.
const BOOKKEEPING: [&str; 2] = ["subcommand", "version"];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, found `{line}`", i + 1))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                bail!("config line {}: empty key", i + 1);
            }
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                bail!("config line {}: duplicate key `{key}`", i + 1);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// Resolves each parameter as flag, then config file, then default, and
/// records the resolved values for the manifest.
pub struct Resolver {
    subcommand: &'static str,
    file: ConfigFile,
    known: BTreeSet<&'static str>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(subcommand: &'static str, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if let Some((line, value)) = file.entries.get("subcommand") {
            if value != subcommand {
                bail!("config line {line}: written for `{value}`, not `{subcommand}`");
            }
        }
        Ok(Self { subcommand, file, known: BOOKKEEPING.into_iter().collect(), resolved: Vec::new() })
    }

    fn file_value<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.known.insert(key);
        match self.file.entries.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config line {line}: bad value `{raw}` for `{key}`: {e}")),
        }
    }

    /// Flag value, else file value, or `None`. Not recorded.
    pub fn peek<T: FromStr>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        Ok(flag.or(file))
    }

    /// Optional parameter; recorded when present.
    pub fn optional<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let value = self.peek(key, flag)?;
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    pub fn or_default<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let value = self.peek(key, flag)?.unwrap_or(default);
        self.record(key, &value);
        Ok(value)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        let value = self
            .peek(key, flag)?
            .ok_or_else(|| anyhow!("`{}` needs --{key}", self.subcommand))?;
        self.record(key, &value);
        Ok(value)
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<Vec<T>>, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.known.insert(key);
        let value = match flag {
            Some(v) => v,
            None => match self.file.entries.get(key) {
                None => default,
                Some((line, raw)) => raw
                    .split(',')
                    .map(|s| s.trim().parse::<T>())
                    .collect::<std::result::Result<Vec<T>, _>>()
                    .map_err(|e| anyhow!("config line {line}: bad list `{raw}` for `{key}`: {e}"))?,
            },
        };
        let joined = value.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        self.resolved.push((key.to_string(), joined));
        Ok(value)
    }

    pub fn path(&mut self, key: &'static str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        self.known.insert(key);
        let value = flag.or_else(|| self.file.entries.get(key).map(|(_, v)| PathBuf::from(v)));
        if let Some(p) = &value {
            self.resolved.push((key.to_string(), p.display().to_string()));
        }
        Ok(value)
    }

    pub fn record(&mut self, key: &str, value: &dyn Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    /// Rejects a parameter that does not apply in the resolved setting.
    pub fn forbid(&mut self, key: &'static str, flag_given: bool, why: &str) -> Result<()> {
        self.known.insert(key);
        if flag_given || self.file.entries.contains_key(key) {
            bail!("--{key} does not apply {why}");
        }
        Ok(())
    }

    /// Fails on config keys the subcommand never asked for.
    pub fn finish(self) -> Result<Manifest> {
        if let Some((key, (line, _))) = self.file.entries.iter().find(|(k, _)| !self.known.contains(k.as_str())) {
            bail!("config line {line}: unknown key `{key}` for `{}`", self.subcommand);
        }
        let mut entries = vec![
            ("subcommand".to_string(), self.subcommand.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        entries.extend(self.resolved);
        Ok(Manifest { entries })
    }
}

/// Flat `key=value` record of a resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes `<artifact>.manifest` next to the artifact.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.to_text()).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolver(text: &str) -> Resolver {
        Resolver { subcommand: "train", file: ConfigFile::parse(text).unwrap(), known: BOOKKEEPING.into_iter().collect(), resolved: Vec::new() }
    }

    #[test]
    fn parses_comments_and_spacing() {
        let c = ConfigFile::parse("# comment\n trees = 100\nkind=cart\n\n").unwrap();
        assert_eq!(c.entries["trees"].1, "100");
        assert_eq!(c.entries["kind"].1, "cart");
        assert!(ConfigFile::parse("trees 100").is_err());
        assert!(ConfigFile::parse("a=1\na=2").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut r = resolver("trees = 100\nnodesize = 3");
        assert_eq!(r.or_default("trees", Some(50usize), 500).unwrap(), 50);
        assert_eq!(r.or_default("nodesize", None, 5usize).unwrap(), 3);
        assert_eq!(r.or_default("mtry", None::<usize>, 7).unwrap(), 7);
        let m = r.finish().unwrap();
        assert_eq!(m.get("trees"), Some("50"));
        assert_eq!(m.get("nodesize"), Some("3"));
    }

    #[test]
    fn unknown_and_forbidden_keys() {
        let r = resolver("bogus = 1");
        assert!(r.finish().is_err());
        let mut r = resolver("mtry = 2");
        assert!(r.forbid("mtry", false, "to median trees").is_err());
        let mut r = resolver("x = half");
        assert!(r.or_default("x", None, 0.5f64).is_err());
    }

    #[test]
    fn manifest_is_a_config() {
        let mut r = resolver("");
        r.or_default("trees", None, 500usize).unwrap();
        r.list("grid", Some(vec![1usize, 2, 3]), vec![]).unwrap();
        let text = r.finish().unwrap().to_text();
        assert!(text.starts_with("subcommand=train\nversion="));
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back.entries["grid"].1, "1,2,3");
    }
}
