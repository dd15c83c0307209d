//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::path::Path;

use sadd::data::GenConfig;
use sadd::inference::HistogramSpec;
use sadd::model::ArchConfig;
use sadd::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::Failure;

/// Grid used by `sweep-alpha` unless the config says otherwise.
pub const DEFAULT_ALPHAS: [f64; 10] = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
        }
    }
}

/// Everything a run depends on. `seed` drives both data generation and
/// training; `train.seed` must agree with it if given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub train: TrainConfig,
    pub hist: HistogramSpec,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            seed: train.seed,
            data: GenConfig::for_arch(&train.arch),
            train,
            hist: HistogramSpec::default(),
            sweep: SweepConfig::default(),
        }
    }
}

const SHAPE_KEYS: [&str; 5] = ["audio_window", "frames_window", "frame_channels", "frame_height", "frame_width"];

impl RunConfig {
    /// Reads `path` (a config file or a `run.meta`) if given, then applies
    /// the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut t: Table = text
                    .parse()
                    .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
                // a run.meta carries the resolved config under [config]
                if t.contains_key("command") {
                    match t.remove("config") {
                        Some(Value::Table(c)) => t = c,
                        _ => return Err(Failure::usage(format!("{}: run.meta without a [config] table", p.display()))),
                    }
                }
                t
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(mut table: Table) -> Result<Self, Failure> {
        expand_arch_preset(&mut table)?;
        let shapes_given = match table.get("data") {
            Some(Value::Table(d)) => SHAPE_KEYS.iter().any(|k| d.contains_key(*k)),
            _ => false,
        };
        let train_seed = match table.get("train") {
            Some(Value::Table(t)) => t.get("seed").cloned(),
            _ => None,
        };
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::usage(format!("invalid config: {}", e.message())))?;
        if let Some(s) = train_seed {
            if s.as_integer() != Some(cfg.seed as i64) {
                return Err(Failure::usage(format!(
                    "train.seed = {s} disagrees with seed = {}; set the top-level seed only",
                    cfg.seed
                )));
            }
        }
        cfg.train.seed = cfg.seed;
        if shapes_given {
            cfg.data.check_matches(&cfg.train.arch)?;
        } else {
            cfg.data = cfg.data.with_shapes_of(&cfg.train.arch);
        }
        cfg.data.validate()?;
        cfg.train.validate()?;
        cfg.hist.validate()?;
        if cfg.sweep.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Failure::usage("sweep.alphas must be finite and non-negative"));
        }
        Ok(cfg)
    }

    pub fn to_table(&self) -> Table {
        match Value::try_from(self).expect("config serializes to TOML") {
            Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        }
    }
}

/// `train.arch = "desk"` or `"reduced"` stands for the full preset.
fn expand_arch_preset(table: &mut Table) -> Result<(), Failure> {
    let Some(Value::Table(train)) = table.get_mut("train") else {
        return Ok(());
    };
    let Some(Value::String(name)) = train.get("arch") else {
        return Ok(());
    };
    let arch = match name.as_str() {
        "desk" => ArchConfig::desk(),
        "reduced" => ArchConfig::reduced(),
        other => return Err(Failure::usage(format!("unknown architecture preset `{other}` (desk, reduced)"))),
    };
    train.insert("arch".into(), Value::try_from(arch).expect("arch serializes"));
    Ok(())
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one, and as a bare string otherwise.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), Failure> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::usage(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_owned()),
    };
    let (leaf, parents) = path.split_last().expect("split yields one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Failure::usage(format!("override `{spec}`: `{p}` is not a section"))),
        };
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}
