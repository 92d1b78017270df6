use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbae::Normalization;
use crate::trainer::TrainConfig;

/// A named training setup derived from the base configuration.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cacla")]
    Cacla,
    #[serde(rename = "cacla+mbae")]
    CaclaMbae,
    #[serde(rename = "dyna-only")]
    DynaOnly,
    #[serde(rename = "mbae-unit")]
    MbaeUnit,
    #[serde(rename = "mbae-policy-std")]
    MbaePolicyStd,
    #[serde(rename = "mbae-optimize-eval")]
    MbaeOptimizeEval,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Cacla,
        Variant::CaclaMbae,
        Variant::DynaOnly,
        Variant::MbaeUnit,
        Variant::MbaePolicyStd,
        Variant::MbaeOptimizeEval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cacla => "cacla",
            Variant::CaclaMbae => "cacla+mbae",
            Variant::DynaOnly => "dyna-only",
            Variant::MbaeUnit => "mbae-unit",
            Variant::MbaePolicyStd => "mbae-policy-std",
            Variant::MbaeOptimizeEval => "mbae-optimize-eval",
        }
    }

    /// The base configuration adjusted for this variant.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let mbae_on = !matches!(self, Variant::Cacla | Variant::DynaOnly);
        if !mbae_on {
            cfg.mbae.p = 0.0;
        }
        cfg.dyna.enabled = self != Variant::Cacla;
        cfg.optimize_eval = self == Variant::MbaeOptimizeEval;
        match self {
            Variant::MbaeUnit => cfg.mbae.normalization = Normalization::Unit,
            Variant::MbaePolicyStd => cfg.mbae.normalization = Normalization::PolicyStd,
            _ => {}
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

/// Per-episode statistic across seeds in aggregate files.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Cacla, Variant::CaclaMbae]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub aggregate: Aggregate,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("at least one variant is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        let mut variants = self.variants.clone();
        variants.sort_unstable();
        variants.dedup();
        if seeds.len() != self.seeds.len() || variants.len() != self.variants.len() {
            return Err(Error::config("seeds and variants must not repeat"));
        }
        for v in &self.variants {
            v.apply(&self.train).validate()?;
        }
        Ok(())
    }

    /// Parses a TOML document after applying `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e| Error::config(format!("{e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("{e}")))
    }
}

/// Sets `a.b.c = value` in `table`. The value is parsed as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key {key:?} crosses a non-table value")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
