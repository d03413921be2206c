//! Run configuration: a TOML file with dotted keys, overridable from the
//! command line with `--some.key value`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sparsedet::scene::{SceneConfig, DEFAULT_FRACTIONS};
use sparsedet::train::TrainConfig;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Train/val/test fractions, summing to 1.
    pub fractions: [f64; 3],
    /// Per-class visible-label cap on the train partition; absent means no cap.
    pub cap: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let (a, b, c) = DEFAULT_FRACTIONS;
        Self {
            fractions: [a, b, c],
            cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub seeds: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { seeds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Run directory name under `--out` for `train` and `compare`.
    pub name: String,
    /// Root seed for data generation and training.
    pub seed: u64,
    /// Class frequencies; replaces `scene.classes` with default-looking classes.
    pub class_weights: Option<Vec<f64>>,
    pub scene: SceneConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".to_string(),
            seed: 0,
            class_weights: None,
            scene: SceneConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

/// A resolved configuration plus what the user actually wrote.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Table,
}

impl LoadedConfig {
    /// Whether the user set `path` (dotted) explicitly.
    pub fn is_set(&self, path: &str) -> bool {
        lookup(&self.raw, path).is_some()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(&self.config)?)
    }
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut current = table.get(parts.next()?)?;
    for p in parts {
        current = current.as_table()?.get(p)?;
    }
    Some(current)
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{path}`");
    }
    let mut current = table;
    for p in &parts[..parts.len() - 1] {
        let entry = current.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        current = match entry {
            Value::Table(t) => t,
            _ => bail!("`{path}`: `{p}` is not a table"),
        };
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Every leaf the user wrote must name a real field.
fn check_known(user: &Table, resolved: &Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, resolved.get(k)) {
            (_, None) => bail!("unknown config key `{path}`"),
            (Value::Table(u), Some(Value::Table(r))) => check_known(u, r, &path)?,
            _ => {}
        }
    }
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<LoadedConfig> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut raw, k, parse_value(v))?;
    }
    let mut config: RunConfig = Value::Table(raw.clone()).try_into().context("invalid configuration")?;
    if let Some(w) = &config.class_weights {
        config.scene = SceneConfig {
            classes: SceneConfig::with_weights(w).classes,
            ..config.scene
        };
    }
    // the training seed follows the root seed
    config.train.seed = config.seed;
    let resolved = match Value::try_from(&config)? {
        Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    };
    check_known(&raw, &resolved, "")?;
    Ok(LoadedConfig { config, raw })
}

impl RunConfig {
    pub fn validate_scene(&self) -> Result<()> {
        self.scene.validate()?;
        let sum: f64 = self.split.fractions.iter().sum();
        if self.split.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            bail!("split.fractions must be in [0, 1] and sum to 1");
        }
        if self.split.cap == Some(0) {
            bail!("split.cap must be at least 1");
        }
        Ok(())
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.split.fractions;
        (a, b, c)
    }
}
