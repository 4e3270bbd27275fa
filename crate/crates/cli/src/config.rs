use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mplab_core::eval::BalanceTarget;
use mplab_core::ml::Family;
use mplab_core::scenesim::NoiseModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Per-class row count for balancing: a number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetSetting {
    #[default]
    Auto,
    Count(usize),
}

impl TargetSetting {
    pub fn balance(self) -> BalanceTarget {
        match self {
            TargetSetting::Auto => BalanceTarget::Auto,
            TargetSetting::Count(n) => BalanceTarget::PerClass(n),
        }
    }
}

impl FromStr for TargetSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(TargetSetting::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(TargetSetting::Count(n)),
            _ => Err(format!("target `{s}` must be a positive integer or `auto`")),
        }
    }
}

impl fmt::Display for TargetSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSetting::Auto => f.write_str("auto"),
            TargetSetting::Count(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for TargetSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TargetSetting::Auto => s.serialize_str("auto"),
            TargetSetting::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TargetSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => TargetSetting::from_str(&n.to_string()),
            Raw::Word(w) => TargetSetting::from_str(&w),
        }
        .map_err(serde::de::Error::custom)
    }
}

fn default_hours() -> f64 {
    2.0
}

fn default_folds() -> usize {
    5
}

fn default_algorithms() -> Vec<Family> {
    Family::ALL.to_vec()
}

/// End-to-end run description. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene JSON file or directory of them.
    pub scenes: PathBuf,
    /// Broadcast navigation file.
    pub nav: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_hours")]
    pub hours: f64,
    /// `WEEK:SOW`; defaults to the earliest ephemeris reference time.
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Rows per class in each of T0 and T1.
    #[serde(default)]
    pub target: TargetSetting,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Family>,
    /// Grid overrides per algorithm; others use the default grid.
    #[serde(default)]
    pub grids: BTreeMap<Family, BTreeMap<String, Vec<f64>>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| CliError::file(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.scenes, &mut config.nav, &mut config.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}
