use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of evaluating one trained model on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub config: String,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: Vec<bool>,
}

impl RunResult {
    /// Builds a result whose accuracy is the mean of `correct`.
    pub fn new(dataset: impl Into<String>, config: impl Into<String>, seed: u64, correct: Vec<bool>) -> Result<Self> {
        if correct.is_empty() {
            return Err(Error::Eval("empty evaluation set".into()));
        }
        let accuracy = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        Ok(Self { dataset: dataset.into(), config: config.into(), seed, accuracy, correct })
    }

    pub fn file_name(&self) -> String {
        format!("{}__{}__seed{}.json", self.dataset, self.config, self.seed)
    }

    /// Writes the record as JSON into `dir` and returns its path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: RunResult = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub max: f64,
    pub stddev: f64,
    pub runs: usize,
}

/// Mean, max and population standard deviation of runs sharing one
/// (dataset, config) pair.
pub fn aggregate(results: &[RunResult]) -> Result<Aggregate> {
    let first = results.first().ok_or_else(|| Error::Eval("no results to aggregate".into()))?;
    if let Some(r) = results.iter().find(|r| r.dataset != first.dataset || r.config != first.config) {
        return Err(Error::Eval(format!(
            "cannot aggregate {}/{} with {}/{}",
            first.dataset, first.config, r.dataset, r.config
        )));
    }
    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let max = results.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let var = results.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / n;
    Ok(Aggregate { mean, max, stddev: var.sqrt(), runs: results.len() })
}

/// Statistic shown in a summary table cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Max,
    Stddev,
}

/// Configs × datasets grid with a trailing average column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub stat: Stat,
    pub datasets: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub cells: Vec<Option<f64>>,
    /// Mean over the datasets this config was run on.
    pub avg: f64,
}

/// Groups results by (config, dataset) and tabulates `stat`. Rows and
/// columns keep first-appearance order.
pub fn summary_table(results: &[RunResult], stat: Stat) -> Result<SummaryTable> {
    let mut datasets: Vec<String> = Vec::new();
    let mut configs: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<RunResult>> = BTreeMap::new();
    for r in results {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
        if !configs.contains(&r.config) {
            configs.push(r.config.clone());
        }
        groups.entry((r.config.clone(), r.dataset.clone())).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for c in &configs {
        let mut cells = Vec::new();
        for d in &datasets {
            let cell = match groups.get(&(c.clone(), d.clone())) {
                Some(g) => {
                    let a = aggregate(g)?;
                    Some(match stat {
                        Stat::Mean => a.mean,
                        Stat::Max => a.max,
                        Stat::Stddev => a.stddev,
                    })
                }
                None => None,
            };
            cells.push(cell);
        }
        let present: Vec<f64> = cells.iter().flatten().copied().collect();
        let avg = present.iter().sum::<f64>() / present.len() as f64;
        rows.push(SummaryRow { config: c.clone(), cells, avg });
    }
    Ok(SummaryTable { stat, datasets, rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl SummaryTable {
    /// Orders rows by descending average, ties by name.
    pub fn sort_by_avg(&mut self) {
        self.rows
            .sort_by(|a, b| b.avg.total_cmp(&a.avg).then_with(|| a.config.cmp(&b.config)));
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config");
        for d in &self.datasets {
            let _ = write!(s, ",{d}");
        }
        s.push_str(",Avg\n");
        for r in &self.rows {
            s.push_str(&r.config);
            for &c in &r.cells {
                let _ = write!(s, ",{}", c.map_or(String::new(), |x| format!("{x:.6}")));
            }
            let _ = writeln!(s, ",{:.6}", r.avg);
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| config |");
        for d in &self.datasets {
            let _ = write!(s, " {d} |");
        }
        s.push_str(" Avg |\n|---|");
        for _ in &self.datasets {
            s.push_str("---|");
        }
        s.push_str("---|\n");
        for r in &self.rows {
            let _ = write!(s, "| {} |", r.config);
            for &c in &r.cells {
                let _ = write!(s, " {} |", cell(c));
            }
            let _ = writeln!(s, " {:.3} |", r.avg);
        }
        s
    }
}
