//! `key = value` run configuration with `[section]` headers. Command-line
//! flags override file values, which override built-in defaults. Every
//! resolved value is recorded so the manifest can reproduce the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::Invalid;

#[derive(Default)]
pub struct Settings {
    file: Option<Ini>,
    resolved: BTreeMap<String, String>,
    consumed: BTreeSet<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Invalid> {
        let file = path
            .map(|p| Ini::load_from_file(p).map_err(|e| Invalid(format!("config {}: {e}", p.display()))))
            .transpose()?;
        Ok(Settings {
            file,
            ..Default::default()
        })
    }

    pub fn from_str(text: &str) -> Result<Self, Invalid> {
        let file = Ini::load_from_str(text).map_err(|e| Invalid(format!("config: {e}")))?;
        Ok(Settings {
            file: Some(file),
            ..Default::default()
        })
    }

    fn file_value(&self, section: &str, key: &str) -> Option<&str> {
        self.file.as_ref()?.section(Some(section))?.get(key)
    }

    /// Flag, else file value, else `default`.
    pub fn get<T>(&mut self, section: &str, key: &str, flag: Option<T>, default: T) -> Result<T, Invalid>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.consumed.insert((section.to_string(), key.to_string()));
        let value = match (flag, self.file_value(section, key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text.trim().parse().map_err(|e| Invalid(format!("[{section}] {key} = {text}: {e}")))?,
            (None, None) => default,
        };
        self.resolved.insert(format!("{section}.{key}"), value.to_string());
        Ok(value)
    }

    /// Like [`get`](Self::get) without a default; absence is an error.
    pub fn require<T>(&mut self, section: &str, key: &str, flag: Option<T>) -> Result<T, Invalid>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.consumed.insert((section.to_string(), key.to_string()));
        let value = match (flag, self.file_value(section, key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text.trim().parse().map_err(|e| Invalid(format!("[{section}] {key} = {text}: {e}")))?,
            (None, None) => return Err(Invalid(format!("missing `{key}` (flag or [{section}] entry)"))),
        };
        self.resolved.insert(format!("{section}.{key}"), value.to_string());
        Ok(value)
    }

    /// Optional value with no default; recorded only when present.
    pub fn optional<T>(&mut self, section: &str, key: &str, flag: Option<T>) -> Result<Option<T>, Invalid>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        if flag.is_none() && self.file_value(section, key).is_none() {
            self.consumed.insert((section.to_string(), key.to_string()));
            return Ok(None);
        }
        self.require(section, key, flag).map(Some)
    }

    /// Rejects file keys in `sections` that no lookup asked for.
    pub fn check_unknown(&self, sections: &[&str]) -> Result<(), Invalid> {
        let Some(file) = &self.file else { return Ok(()) };
        for &section in sections {
            if let Some(props) = file.section(Some(section)) {
                for (key, _) in props.iter() {
                    if !self.consumed.contains(&(section.to_string(), key.to_string())) {
                        return Err(Invalid(format!("unknown key `{key}` in [{section}]")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
