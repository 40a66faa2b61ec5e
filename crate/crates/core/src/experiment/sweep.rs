//! Grids of experiment variants over one or more datasets.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ensure_writable, resolve_output, run_with_results, DataSource, ExperimentConfig, ExperimentSummary};
use crate::error::{Error, Result};
use crate::eval::{summary_table, Stat, SummaryTable};

/// One row of the grid: presets applied in order, then a JSON merge of
/// `overrides` onto the base experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    /// Names accepted by `ModelConfig::apply_name`, e.g. `small-4` or `rel2-eb-c`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub overrides: Value,
}

impl Variant {
    /// A variant named after, and defined by, a single preset.
    pub fn preset(name: &str) -> Self {
        Self { name: name.into(), presets: vec![name.into()], overrides: Value::Null }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Experiment JSON every variant starts from. Its `output_dir` is ignored.
    pub base: Value,
    pub variants: Vec<Variant>,
    /// Datasets to run each variant on; defaults to the base's `data`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<DataSource>,
    pub output_dir: PathBuf,
    #[serde(default = "default_stat")]
    pub stat: Stat,
}

fn default_stat() -> Stat {
    Stat::Mean
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub experiments: Vec<ExperimentSummary>,
    /// All configs × datasets, rows sorted by descending average.
    pub table: SummaryTable,
}

/// Recursive JSON merge: objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p.clone(),
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Expands the grid into concrete experiments, failing on any bad cell
    /// before anything runs.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.variants.is_empty() {
            return Err(Error::Experiment("sweep has no variants".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.variants {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Experiment(format!("duplicate variant name {:?}", v.name)));
            }
        }
        let root = resolve_output(&self.output_dir);
        let mut base = self.base.clone();
        if !base.is_object() {
            return Err(Error::Experiment("sweep base must be a JSON object".into()));
        }
        base["output_dir"] = Value::String(String::new());
        let datasets: Vec<Option<&DataSource>> = if self.datasets.is_empty() {
            vec![None]
        } else {
            self.datasets.iter().map(Some).collect()
        };
        let mut out = Vec::new();
        for v in &self.variants {
            for ds in &datasets {
                let mut value = base.clone();
                if let Some(ds) = ds {
                    value["data"] = serde_json::to_value(ds)?;
                }
                merge_json(&mut value, &v.overrides);
                let mut cfg: ExperimentConfig = serde_json::from_value(value)
                    .map_err(|e| Error::Experiment(format!("variant {:?}: {e}", v.name)))?;
                for p in &v.presets {
                    cfg.model = cfg.model.apply_name(p)?;
                }
                cfg.name = Some(v.name.clone());
                cfg.output_dir = root.join(&v.name).join(cfg.data.name());
                cfg.validate().map_err(|e| Error::Experiment(format!("variant {:?}: {e}", v.name)))?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

/// Runs every cell of the grid and writes the merged table to
/// `summary.{json,csv,md}` in the sweep's output directory.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    let cells = cfg.expand()?;
    let root = resolve_output(&cfg.output_dir);
    ensure_writable(&root)?;
    let mut experiments = Vec::new();
    let mut results = Vec::new();
    for cell in &cells {
        let (summary, runs) = run_with_results(cell)?;
        experiments.push(summary);
        results.extend(runs);
    }
    let mut table = summary_table(&results, cfg.stat)?;
    table.sort_by_avg();
    let outcome = SweepOutcome { experiments, table };
    fs::write(root.join("summary.json"), serde_json::to_string_pretty(&outcome)?)?;
    fs::write(root.join("summary.csv"), outcome.table.to_csv())?;
    fs::write(root.join("summary.md"), outcome.table.to_markdown())?;
    Ok(outcome)
}
