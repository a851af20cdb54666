//! Flat key-value run configuration files with `[section]` headers.
//!
//! Values are addressed as `section.key`. Command-line `--set section.key=v`
//! overrides take precedence over file values. Every grid point is validated
//! before any run starts.

use crate::adapter::{AdapterConfig, SigmaTransform, Variant};
use crate::error::{Error, Result};
use crate::tasks::{TrainOptions, DEFAULT_WARMUP_STEPS};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Parsed configuration: a flat `section.key -> value` map.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            values.insert(full, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies `section.key=value` overrides on top of file values.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Argument(format!("override '{item}' is not of the form section.key=value"))
            })?;
            self.values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("missing required config key '{key}'")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Format(format!("config key '{key}' has invalid value '{v}'"))),
        }
    }

    pub fn require_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("config key '{key}' has invalid value '{v}'")))
    }

    /// Comma-separated list value, falling back to the scalar under the same
    /// key; empty when the key is absent.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Which task family a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Approx,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "approx" | "approximation" => Ok(TaskKind::Approx),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Argument(format!("unknown task kind '{other}'"))),
        }
    }
}

/// Fully resolved single-run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub adapter: AdapterConfig,
    pub task: TaskKind,
    pub target_rank: usize,
    pub samples: usize,
    pub noise: f64,
    pub task_seed: u64,
    pub train_seed: u64,
    pub opts: TrainOptions,
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

fn adapter_from(kv: &KvConfig, r: usize, b: usize, variant: Variant, t: SigmaTransform) -> Result<AdapterConfig> {
    let m: usize = kv.require_value("task.m")?;
    let n: usize = kv.require_value("task.n")?;
    let alpha: f64 = kv.parse_value("adapter.alpha", r as f64)?;
    AdapterConfig::new(m, n, r, b, variant, t, alpha)
}

impl RunConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let variant: Variant = kv.require_value("adapter.variant")?;
        let r: usize = kv.require_value("adapter.r")?;
        let b: usize = kv.parse_value("adapter.b", 1)?;
        let transform: SigmaTransform =
            kv.parse_value("adapter.sigma_transform", SigmaTransform::NormExp)?;
        let adapter = adapter_from(kv, r, b, variant, transform)?;
        let mut opts = TrainOptions::new(
            kv.parse_value("train.steps", 100)?,
            kv.parse_value("train.lr", 1e-2)?,
        );
        opts.warmup = kv.parse_value("train.warmup", DEFAULT_WARMUP_STEPS)?;
        opts.weight_decay = kv.parse_value("train.weight_decay", 0.0)?;
        Ok(Self {
            adapter,
            task: kv.parse_value("task.kind", TaskKind::Approx)?,
            target_rank: kv.parse_value("task.target_rank", adapter.r)?,
            samples: kv.parse_value("task.samples", 32)?,
            noise: kv.parse_value("task.noise", 0.0)?,
            task_seed: kv.parse_value("task.seed", 0)?,
            train_seed: kv.parse_value("train.seed", 1)?,
            opts,
            csv_path: kv.get("output.csv").map(PathBuf::from),
            json_path: kv.get("output.json").map(PathBuf::from),
            checkpoint_path: kv.get("output.checkpoint").map(PathBuf::from),
        })
    }
}

/// Resolved sweep configuration: the full cross product of grid axes.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: Vec<AdapterConfig>,
    pub target_rank: usize,
    pub task_seed: u64,
    pub train_seeds: Vec<u64>,
    pub opts: TrainOptions,
    pub csv_path: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let variants: Vec<Variant> = parse_list(kv, "grid.variant")?;
        let ranks: Vec<usize> = parse_list(kv, "grid.r")?;
        let blocks: Vec<usize> = {
            let raw = kv.list("grid.b");
            if raw.is_empty() {
                vec![1]
            } else {
                parse_items(&raw, "grid.b")?
            }
        };
        let transforms: Vec<SigmaTransform> = {
            let raw = kv.list("grid.sigma_transform");
            if raw.is_empty() {
                vec![SigmaTransform::NormExp]
            } else {
                parse_items(&raw, "grid.sigma_transform")?
            }
        };
        if variants.is_empty() || ranks.is_empty() {
            return Err(Error::Argument("sweep grid must list at least one variant and rank".into()));
        }
        let mut grid = Vec::new();
        for &variant in &variants {
            for &r in &ranks {
                let bs: &[usize] = if variant == Variant::Lora { &[1] } else { &blocks };
                // The transform axis only distinguishes the diversified variant.
                let ts: &[SigmaTransform] = if variant == Variant::Bora {
                    &transforms
                } else {
                    &[SigmaTransform::NormExp]
                };
                for &b in bs {
                    for &t in ts {
                        // Fail fast: every grid point must validate up front.
                        grid.push(adapter_from(kv, r, b, variant, t)?);
                    }
                }
            }
        }
        let train_seeds: Vec<u64> = {
            let raw = kv.list("train.seeds");
            if raw.is_empty() {
                vec![kv.parse_value("train.seed", 1)?]
            } else {
                parse_items(&raw, "train.seeds")?
            }
        };
        let mut opts = TrainOptions::new(
            kv.parse_value("train.steps", 100)?,
            kv.parse_value("train.lr", 1e-2)?,
        );
        opts.warmup = kv.parse_value("train.warmup", DEFAULT_WARMUP_STEPS)?;
        opts.weight_decay = kv.parse_value("train.weight_decay", 0.0)?;
        Ok(Self {
            grid,
            target_rank: kv.parse_value("task.target_rank", ranks[0])?,
            task_seed: kv.parse_value("task.seed", 0)?,
            train_seeds,
            opts,
            csv_path: kv.get("output.csv").map(PathBuf::from),
        })
    }
}

fn parse_list<T: std::str::FromStr>(kv: &KvConfig, key: &str) -> Result<Vec<T>> {
    parse_items(&kv.list(key), key)
}

fn parse_items<T: std::str::FromStr>(raw: &[String], key: &str) -> Result<Vec<T>> {
    raw.iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("config key '{key}' has invalid item '{s}'")))
        })
        .collect()
}
