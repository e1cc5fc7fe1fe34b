//! TOML run configuration. Command-line flags override every field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use arsched_core::train::TrainConfig;
use arsched_core::workload::{Granularity, RingSync};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub quiet: Option<bool>,
    /// Preset label, generator spec (`bcube:3,1`) or topology JSON path.
    pub topology: Option<String>,
    pub granularity: Option<Granularity>,
    pub scheduler: SchedulerSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub seeds: Option<u64>,
    pub ring_sync: Option<RingSync>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub seeds: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub presets: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub seeds: Option<u64>,
    /// Preset label to checkpoint path, for the `rl` method.
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.out_dir.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.eval.checkpoint.as_mut() {
            rebase(p);
        }
        cfg.bench.checkpoints.values_mut().for_each(rebase);
        if let Some(t) = cfg.topology.as_mut() {
            let candidate = base.join(&*t);
            if t.ends_with(".json") && Path::new(t).is_relative() {
                *t = candidate.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }
}
