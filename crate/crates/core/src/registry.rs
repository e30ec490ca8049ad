//! Pass universe and hierarchy levels.
//!
//! A registry maps every known pass name to the IR granularity it runs at.
//! It is loaded from a line-oriented `name=level` file or taken from the
//! built-in default, and is immutable afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// IR granularity of a pass or pass manager.
///
/// Ordering follows nesting depth: `Module < Cgscc < Function < Loop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassLevel {
    Module,
    Cgscc,
    Function,
    Loop,
}

impl PassLevel {
    pub const ALL: [PassLevel; 4] = [
        PassLevel::Module,
        PassLevel::Cgscc,
        PassLevel::Function,
        PassLevel::Loop,
    ];

    /// Manager keyword as spelled in a pipeline string.
    pub fn keyword(self) -> &'static str {
        match self {
            PassLevel::Module => "module",
            PassLevel::Cgscc => "cgscc",
            PassLevel::Function => "function",
            PassLevel::Loop => "loop",
        }
    }

    pub fn from_keyword(word: &str) -> Option<PassLevel> {
        match word {
            "module" => Some(PassLevel::Module),
            "cgscc" => Some(PassLevel::Cgscc),
            "function" => Some(PassLevel::Function),
            "loop" => Some(PassLevel::Loop),
            _ => None,
        }
    }

    /// One-letter tag used in tables (M, C, F, L).
    pub fn short(self) -> char {
        match self {
            PassLevel::Module => 'M',
            PassLevel::Cgscc => 'C',
            PassLevel::Function => 'F',
            PassLevel::Loop => 'L',
        }
    }
}

impl fmt::Display for PassLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Level binding of a registry entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LevelSpec {
    Fixed(PassLevel),
    /// Runs at whatever level its enclosing manager has (`invalidate<all>`).
    Polymorphic,
}

impl LevelSpec {
    /// Whether a pass with this binding may appear directly inside a
    /// manager of `level`.
    pub fn admits(self, level: PassLevel) -> bool {
        match self {
            LevelSpec::Fixed(l) => l == level,
            LevelSpec::Polymorphic => true,
        }
    }
}

impl fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSpec::Fixed(l) => l.fmt(f),
            LevelSpec::Polymorphic => f.write_str("any"),
        }
    }
}

impl FromStr for LevelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any" => Ok(LevelSpec::Polymorphic),
            other => PassLevel::from_keyword(other)
                .map(LevelSpec::Fixed)
                .ok_or_else(|| format!("unknown level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PassInfo {
    pub name: String,
    pub level: LevelSpec,
}

impl PassInfo {
    pub fn new(name: impl Into<String>, level: PassLevel) -> Self {
        PassInfo {
            name: name.into(),
            level: LevelSpec::Fixed(level),
        }
    }

    /// The concrete level, or `None` for polymorphic passes.
    pub fn fixed_level(&self) -> Option<PassLevel> {
        match self.level {
            LevelSpec::Fixed(l) => Some(l),
            LevelSpec::Polymorphic => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate pass `{name}`")]
    DuplicatePass { line: usize, name: String },
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
    #[error("pass `{0}` has no fixed level; its level comes from the enclosing manager")]
    PolymorphicPass(String),
}

/// Checks the pass-name token rules: non-empty, lowercase letters, digits,
/// `-`, `<`, `>`.
pub fn is_valid_pass_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '-' | '<' | '>'))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassRegistry {
    entries: BTreeMap<String, PassInfo>,
}

impl PassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from `(name, level)` pairs. Panics on duplicates or
    /// malformed names; meant for fixtures and the built-in table.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, PassLevel)>) -> Self {
        let mut reg = PassRegistry::new();
        for (name, level) in pairs {
            reg.insert(PassInfo::new(name, level))
                .unwrap_or_else(|e| panic!("bad fixture entry `{name}`: {e}"));
        }
        reg
    }

    /// Default registry covering the passes used throughout the tooling.
    pub fn builtin() -> Self {
        use PassLevel::*;
        let mut reg = PassRegistry::from_pairs([
            ("globalopt", Module),
            ("strip", Module),
            ("scc-oz-module-inliner", Module),
            ("inline", Cgscc),
            ("gvn", Function),
            ("instcombine", Function),
            ("adce", Function),
            ("jump-threading", Function),
            ("correlated-propagation", Function),
            ("reassociate", Function),
            ("slp-vectorizer", Function),
            ("vector-combine", Function),
            ("tsan", Function),
            ("gvn-hoist", Function),
            ("bounds-checking", Function),
            ("instsimplify", Function),
            ("memcpyopt", Function),
            ("scalarize-masked-mem-intrin", Function),
            ("loop-deletion", Loop),
            ("licm", Loop),
        ]);
        reg.insert(PassInfo {
            name: "invalidate<all>".into(),
            level: LevelSpec::Polymorphic,
        })
        .expect("builtin table is well-formed");
        reg
    }

    pub fn insert(&mut self, info: PassInfo) -> Result<(), RegistryError> {
        if !is_valid_pass_name(&info.name) {
            return Err(RegistryError::Parse {
                line: 0,
                message: format!("invalid pass name `{}`", info.name),
            });
        }
        if self.entries.contains_key(&info.name) {
            return Err(RegistryError::DuplicatePass {
                line: 0,
                name: info.name,
            });
        }
        self.entries.insert(info.name.clone(), info);
        Ok(())
    }

    /// Parses the `name=level` registry file format. `#` starts a comment.
    pub fn load(source: &str) -> Result<Self, RegistryError> {
        let mut reg = PassRegistry::new();
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (name, level) = line.split_once('=').ok_or_else(|| RegistryError::Parse {
                line: line_no,
                message: format!("expected `name=level`, got `{line}`"),
            })?;
            let (name, level) = (name.trim(), level.trim());
            if !is_valid_pass_name(name) {
                return Err(RegistryError::Parse {
                    line: line_no,
                    message: format!("invalid pass name `{name}`"),
                });
            }
            let level: LevelSpec = level
                .parse()
                .map_err(|message| RegistryError::Parse { line: line_no, message })?;
            if reg.entries.contains_key(name) {
                return Err(RegistryError::DuplicatePass {
                    line: line_no,
                    name: name.to_string(),
                });
            }
            reg.entries.insert(
                name.to_string(),
                PassInfo {
                    name: name.to_string(),
                    level,
                },
            );
        }
        Ok(reg)
    }

    /// Inverse of [`PassRegistry::load`]; entries come out sorted by name.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for info in self.entries.values() {
            out.push_str(&info.name);
            out.push('=');
            out.push_str(&info.level.to_string());
            out.push('\n');
        }
        out
    }

    pub fn get(&self, name: &str) -> Result<&PassInfo, RegistryError> {
        self.entries
            .get(name)
            .ok_or_else(|| RegistryError::UnknownPass(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn level_of(&self, name: &str) -> Result<PassLevel, RegistryError> {
        self.get(name)?
            .fixed_level()
            .ok_or_else(|| RegistryError::PolymorphicPass(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PassInfo> {
        self.entries.values()
    }

    /// Passes with a fixed level, sorted by name. These are the passes that
    /// mining and random construction draw from.
    pub fn concrete_passes(&self) -> Vec<(&str, PassLevel)> {
        self.entries
            .values()
            .filter_map(|p| p.fixed_level().map(|l| (p.name.as_str(), l)))
            .collect()
    }

    /// Hex SHA-256 of the serialized form.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
