//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # global defaults, overridable from the command line
//! [run]
//! seed = 7
//!
//! [my-cubic]
//! registry = cubic
//! params = 0.01
//! window_lo = -2
//! window_hi = 2
//! seeds = -1; 0; 1
//! budget = 0.1
//! ```
//!
//! Lists are comma separated; `seeds` separates points with `;`. Every
//! section other than `[run]` is a model, and its `registry` key (the section
//! name by default) must name a registry entry.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::registry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: {key} = {value}: {reason}")]
    Field { line: usize, key: String, value: String, reason: String },
    #[error("line {line}: [{section}]: {reason}")]
    Model { line: usize, section: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("no model in the configuration is usable by `{command}`")]
    NoModels { command: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplicingChoice {
    Trivial,
    RotatingLine,
    TruncationApproximate,
}

impl FromStr for SplicingChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trivial" => Ok(Self::Trivial),
            "rotating-line" => Ok(Self::RotatingLine),
            "truncation-approximate" => Ok(Self::TruncationApproximate),
            _ => Err("expected trivial, rotating-line or truncation-approximate".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSettings {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub trials: Option<usize>,
}

/// One model section. Unset optional fields take registry or command defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub line: usize,
    pub registry: String,
    pub params: Vec<f64>,
    pub dims: Option<Vec<usize>>,
    pub weights: Option<Vec<f64>>,
    pub levels: Option<usize>,
    pub quadrant_rank: Option<usize>,
    pub splicing: Option<SplicingChoice>,
    pub filler: Option<f64>,
    pub window: Option<(Vec<f64>, Vec<f64>)>,
    pub seeds: Vec<Vec<f64>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub budget: Option<f64>,
    pub samples: Option<usize>,
}

impl ModelSpec {
    /// A spec for a registry entry with every field at its default.
    pub fn named(registry: &str) -> Self {
        Self {
            name: registry.into(),
            line: 0,
            registry: registry.into(),
            params: Vec::new(),
            dims: None,
            weights: None,
            levels: None,
            quadrant_rank: None,
            splicing: None,
            filler: None,
            window: None,
            seeds: Vec::new(),
            tol: None,
            seed: None,
            trials: None,
            budget: None,
            samples: None,
        }
    }

    pub(crate) fn error(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::Model { line: self.line, section: self.name.clone(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub run: RunSettings,
    pub models: Vec<ModelSpec>,
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

fn field<T: FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| ConfigError::Field {
        line: e.line,
        key: e.key.into(),
        value: e.value.into(),
        reason: format!("expected {}", std::any::type_name::<T>()),
    })
}

fn list<T: FromStr>(e: &Entry, text: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(|item| {
            item.trim().parse().map_err(|_| ConfigError::Field {
                line: e.line,
                key: e.key.into(),
                value: e.value.into(),
                reason: format!("`{}` is not a {}", item.trim(), std::any::type_name::<T>()),
            })
        })
        .collect()
}

fn reject(e: &Entry, reason: &str) -> ConfigError {
    ConfigError::Field { line: e.line, key: e.key.into(), value: e.value.into(), reason: reason.into() }
}

fn positive(e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = field(e)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(reject(e, "must be positive"))
    }
}

fn count(e: &Entry) -> Result<usize, ConfigError> {
    let v: usize = field(e)?;
    if v > 0 {
        Ok(v)
    } else {
        Err(reject(e, "must be at least 1"))
    }
}

fn finite_list(e: &Entry, text: &str) -> Result<Vec<f64>, ConfigError> {
    let v: Vec<f64> = list(e, text)?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(reject(e, "values must be finite"))
    }
}

fn apply_run(run: &mut RunSettings, section: &str, e: &Entry) -> Result<(), ConfigError> {
    match e.key {
        "seed" => run.seed = Some(field(e)?),
        "tol" => run.tol = Some(positive(e)?),
        "trials" => run.trials = Some(count(e)?),
        _ => return Err(ConfigError::UnknownKey { line: e.line, section: section.into(), key: e.key.into() }),
    }
    Ok(())
}

fn apply_model(m: &mut ModelSpec, e: &Entry, window: &mut (Option<Vec<f64>>, Option<Vec<f64>>)) -> Result<(), ConfigError> {
    match e.key {
        "registry" => m.registry = e.value.into(),
        "params" => m.params = finite_list(e, e.value)?,
        "dims" => m.dims = Some(list(e, e.value)?),
        "weights" => {
            let w = finite_list(e, e.value)?;
            if w.iter().any(|&x| x < 1.0) {
                return Err(reject(e, "weights must be at least 1"));
            }
            m.weights = Some(w);
        }
        "levels" => m.levels = Some(count(e)?),
        "quadrant_rank" => m.quadrant_rank = Some(field(e)?),
        "splicing" => m.splicing = Some(e.value.parse().map_err(|r: String| reject(e, &r))?),
        "filler" => m.filler = Some(field(e)?),
        "window_lo" => window.0 = Some(finite_list(e, e.value)?),
        "window_hi" => window.1 = Some(finite_list(e, e.value)?),
        "seeds" => {
            m.seeds = e.value.split(';').map(|p| finite_list(e, p)).collect::<Result<_, _>>()?;
            if m.seeds.windows(2).any(|w| w[0].len() != w[1].len()) {
                return Err(reject(e, "all seed points need the same dimension"));
            }
        }
        "tol" => m.tol = Some(positive(e)?),
        "seed" => m.seed = Some(field(e)?),
        "trials" => m.trials = Some(count(e)?),
        "budget" => m.budget = Some(positive(e)?),
        "samples" => m.samples = Some(count(e)?),
        _ => return Err(ConfigError::UnknownKey { line: e.line, section: m.name.clone(), key: e.key.into() }),
    }
    Ok(())
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

struct RawSection<'a> {
    name: &'a str,
    line: usize,
    entries: Vec<Entry<'a>>,
}

fn split_sections(text: &str) -> Result<Vec<RawSection<'_>>, ConfigError> {
    let mut sections: Vec<RawSection> = Vec::new();
    let mut names = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line, message: "unterminated section header".into() })?
                .trim();
            if !valid_name(name) {
                return Err(ConfigError::Syntax { line, message: format!("invalid section name `{name}`") });
            }
            if !names.insert(name) {
                return Err(ConfigError::Syntax { line, message: format!("duplicate section [{name}]") });
            }
            sections.push(RawSection { name, line, entries: Vec::new() });
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, found `{body}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line, message: "empty key or value".into() });
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| ConfigError::Syntax { line, message: format!("`{key}` appears before any section") })?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::Syntax { line, message: format!("duplicate key `{key}` in [{}]", section.name) });
        }
        section.entries.push(Entry { line, key, value });
    }
    Ok(sections)
}

impl Config {
    /// Parses and resolves every model against the registry.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for section in split_sections(text)? {
            if section.name == "run" {
                for e in &section.entries {
                    apply_run(&mut cfg.run, "run", e)?;
                }
                continue;
            }
            let mut m = ModelSpec::named(section.name);
            m.line = section.line;
            let mut window = (None, None);
            for e in &section.entries {
                apply_model(&mut m, e, &mut window)?;
            }
            m.window = match window {
                (Some(lo), Some(hi)) => {
                    if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a >= b) {
                        return Err(m.error("window_lo must lie strictly below window_hi in every coordinate"));
                    }
                    Some((lo, hi))
                }
                (None, None) => None,
                _ => return Err(m.error("window_lo and window_hi must be given together")),
            };
            registry::resolve(&m)?;
            cfg.models.push(m);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    /// Command-line values replace file values, for the run and every model.
    pub fn override_with(&mut self, seed: Option<u64>, tol: Option<f64>, trials: Option<usize>) {
        if seed.is_some() {
            self.run.seed = seed;
        }
        if tol.is_some() {
            self.run.tol = tol;
        }
        if trials.is_some() {
            self.run.trials = trials;
        }
        for m in &mut self.models {
            m.seed = seed.or(m.seed);
            m.tol = tol.or(m.tol);
            m.trials = trials.or(m.trials);
        }
    }

    /// Run defaults filled into every model that leaves them unset.
    pub fn effective_models(&self) -> Vec<ModelSpec> {
        self.models
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.seed = m.seed.or(self.run.seed);
                m.tol = m.tol.or(self.run.tol);
                m.trials = m.trials.or(self.run.trials);
                m
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_lists_and_comments() {
        let cfg = Config::parse(
            "# header\n[run]\nseed = 9  # trailing\n\n[c]\nregistry = cubic\nparams = 0.01\nseeds = -1; 0 ;1\nwindow_lo = -2\nwindow_hi = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.run.seed, Some(9));
        let m = &cfg.models[0];
        assert_eq!((m.name.as_str(), m.registry.as_str(), m.line), ("c", "cubic", 5));
        assert_eq!(m.params, vec![0.01]);
        assert_eq!(m.seeds, vec![vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(m.window, Some((vec![-2.0], vec![2.0])));
        assert_eq!(cfg.effective_models()[0].seed, Some(9));
    }

    #[test]
    fn diagnostics_carry_lines_and_fields() {
        let err = |t: &str| Config::parse(t).unwrap_err();
        assert!(matches!(err("seed = 1\n"), ConfigError::Syntax { line: 1, .. }));
        assert!(matches!(err("[cubic]\nbogus = 1\n"), ConfigError::UnknownKey { line: 2, .. }));
        assert!(matches!(err("[cubic]\ntol = -1\n"), ConfigError::Field { line: 2, .. }));
        assert!(matches!(err("[cubic]\nbudget = x\n"), ConfigError::Field { line: 2, .. }));
        assert!(matches!(err("[cubic]\n[cubic]\n"), ConfigError::Syntax { line: 2, .. }));
        assert!(matches!(err("[nope]\n"), ConfigError::Model { line: 1, .. }));
        assert!(matches!(err("[cubic]\nwindow_lo = 1\n"), ConfigError::Model { .. }));
        assert!(matches!(err("[cubic\n"), ConfigError::Syntax { line: 1, .. }));
        assert!(matches!(err("[cubic]\nseeds = 1, 2; 3\n"), ConfigError::Field { line: 2, .. }));
        let text = err("[x]\nregistry = circle\nweights = 0.5\n").to_string();
        assert!(text.starts_with("line 3: weights = 0.5"), "{text}");
    }

    #[test]
    fn overrides_reach_every_model() {
        let mut cfg = Config::parse("[run]\nseed = 1\n[cubic]\nseed = 2\n[identity]\n").unwrap();
        cfg.override_with(Some(5), None, Some(3));
        let ms = cfg.effective_models();
        assert!(ms.iter().all(|m| m.seed == Some(5) && m.trials == Some(3)));
    }
}
