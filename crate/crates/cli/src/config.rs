//! Run configuration.
//!
//! Configs are TOML. Every key has a default, so an empty file is a valid
//! config, and `--set key.path=value` overrides any leaf after the file is
//! read. Unknown keys are rejected in both places.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdts_bridge::BridgeConfig;
use mdts_core::search::{LevelWidth, Scorer, SearchConfig, WidthSchedule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Base,
    Bon,
    Fk,
    Treasure,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Bon => "bon",
            Method::Fk => "fk",
            Method::Treasure => "treasure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Planted-target denoiser; the target is shared with the reward.
    Planted,
    /// Seeded Dirichlet rows.
    RandomTable,
    /// Denoiser served by a bridge process.
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub len: usize,
    /// Vocabulary size including the mask token.
    pub vocab: usize,
    pub eps0: f64,
    /// Seed that draws the planted target when `reward.target` is empty.
    pub target_seed: u64,
    pub concentration: f64,
    pub table_seed: u64,
    pub schedule: ScheduleName,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::Planted,
            len: 32,
            vocab: 16,
            eps0: 0.6,
            target_seed: 0,
            concentration: 0.5,
            table_seed: 0,
            schedule: ScheduleName::Linear,
            sigma_min: 1e-4,
            sigma_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    TargetMatch,
    Lexicon,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Explicit target tokens; empty means the seeded planted target.
    pub target: Vec<u32>,
    /// Per-token lexicon weights, one per vocabulary entry.
    pub weights: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: RewardKind::TargetMatch,
            target: Vec::new(),
            weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreasureConfig {
    /// `m`: nodes kept per level. An integer or one entry per level.
    pub tree_width: LevelWidth,
    /// `b`: tokens branched per unmasked position.
    pub beam_width: LevelWidth,
    pub scorer: Scorer,
    pub groups: usize,
}

impl Default for TreasureConfig {
    fn default() -> Self {
        TreasureConfig {
            tree_width: LevelWidth::Constant(4),
            beam_width: LevelWidth::Constant(4),
            scorer: Scorer::Resubstitute,
            groups: 1,
        }
    }
}

impl TreasureConfig {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig::new(WidthSchedule {
            beam: self.beam_width.clone(),
            tree: self.tree_width.clone(),
        })
        .with_scorer(self.scorer)
        .with_groups(self.groups)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BonConfig {
    pub n: usize,
}

impl Default for BonConfig {
    fn default() -> Self {
        BonConfig { n: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkConfig {
    pub particles: usize,
    pub lambda: f64,
    pub ess_frac: f64,
}

impl Default for FkConfig {
    fn default() -> Self {
        FkConfig {
            particles: 4,
            lambda: 1.0,
            ess_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Path prefix; runs write `<output>.csv` and `<output>.jsonl`.
    pub output: String,
    /// Record wall-clock runtime per row. Off gives byte-identical files.
    pub timing: bool,
    pub task: TaskConfig,
    pub reward: RewardConfig,
    pub treasure: TreasureConfig,
    pub bon: BonConfig,
    pub fk: FkConfig,
    pub bridge: BridgeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Treasure,
            seeds: vec![0, 1, 2],
            output: "mdts_out".to_string(),
            timing: true,
            task: TaskConfig::default(),
            reward: RewardConfig::default(),
            treasure: TreasureConfig::default(),
            bon: BonConfig::default(),
            fk: FkConfig::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    #[cfg(test)]
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {}", e.message().trim()))
    }

    /// Reads `path` (if any) and applies `key=value` overrides in order.
    /// Call [`RunConfig::validate`] once all other overrides are in.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config: {}", e.message().trim()))?;
        let keys = known_keys();
        for o in overrides {
            apply_override(&mut table, o, &keys)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {}", e.message().trim()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: the seed list is empty");
        }
        if self.task.len == 0 {
            bail!("task.len: must be at least 1");
        }
        if self.task.kind != TaskKind::Bridge && self.task.vocab < 2 {
            bail!("task.vocab: must be at least 2");
        }
        if self.treasure.groups == 0 {
            bail!("treasure.groups: must be at least 1");
        }
        if self.bon.n == 0 {
            bail!("bon.n: must be at least 1");
        }
        if self.fk.particles == 0 {
            bail!("fk.particles: must be at least 1");
        }
        Ok(())
    }
}

/// Dotted paths of every leaf in the default config. Tables are not leaves;
/// arrays are.
pub fn known_keys() -> BTreeSet<String> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut BTreeSet<String>) {
        for (k, v) in t {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(sub) => walk(&path, sub, out),
                _ => {
                    out.insert(path);
                }
            }
        }
    }
    let table: toml::Table = toml::from_str(&RunConfig::default().to_toml()).expect("default config parses");
    let mut out = BTreeSet::new();
    walk("", &table, &mut out);
    out
}

/// Parses a value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, assignment: &str, keys: &BTreeSet<String>) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not of the form key=value");
    };
    let key = key.trim();
    if !keys.contains(key) {
        bail!("unknown config key {key:?}");
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut node = table;
    for p in parts {
        node = match node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => bail!("config key {p:?} is not a table"),
        };
    }
    node.insert(leaf.to_string(), parse_value(raw.trim()));
    Ok(())
}
