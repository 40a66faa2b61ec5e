//! Flag groups and their layering over JSON config files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde_json::Value;

use compgen::data::{DatasetSpec, LenRange, SplitMode, Task};
use compgen::experiment::{DataSource, ExperimentConfig};
use compgen::model::{Encoding, Mode, ModelConfig, ParentHead};
use compgen::train::TrainConfig;

fn parse_range(s: &str) -> Result<LenRange, String> {
    let (a, b) = s
        .split_once([',', '-', ':'])
        .ok_or_else(|| format!("expected MIN,MAX, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok(LenRange::new(p(a)?, p(b)?))
}

/// Parses a kebab/lowercase enum name through its serde representation.
fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Generated task: add, addneg, reverse, dup, cart, inters, revdup.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Training length range, `MIN,MAX`.
    #[arg(long, value_parser = parse_range)]
    pub train_len: Option<LenRange>,
    /// Test length range, `MIN,MAX`.
    #[arg(long, value_parser = parse_range)]
    pub test_len: Option<LenRange>,
    /// Dataset generation seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// `length` (default) or `iid`.
    #[arg(long, value_parser = parse_named::<SplitMode>)]
    pub split: Option<SplitMode>,
    #[arg(long)]
    pub pad_width: Option<usize>,
    /// Left-pad addition targets too.
    #[arg(long)]
    pub pad_target: bool,
    /// Alphabet size for reverse/dup/revdup.
    #[arg(long)]
    pub symbols: Option<usize>,
    /// Training TSV (instead of a generated task).
    #[arg(long, requires = "test_tsv", conflicts_with = "task")]
    pub train_tsv: Option<PathBuf>,
    #[arg(long, requires = "train_tsv")]
    pub test_tsv: Option<PathBuf>,
    /// Dataset label for TSV data.
    #[arg(long)]
    pub data_name: Option<String>,
}

impl DataArgs {
    pub fn is_set(&self) -> bool {
        self.task.is_some() || self.train_tsv.is_some()
    }

    fn patch_spec(&self, spec: &mut DatasetSpec) {
        if let Some(v) = self.train_size {
            spec.train_size = v;
        }
        if let Some(v) = self.test_size {
            spec.test_size = v;
        }
        if let Some(v) = self.train_len {
            spec.train_len = v;
        }
        if let Some(v) = self.test_len {
            spec.test_len = v;
        }
        if let Some(v) = self.data_seed {
            spec.seed = v;
        }
        if let Some(v) = self.split {
            spec.split = v;
        }
        if let Some(v) = self.pad_width {
            spec.pad_width = v;
        }
        if self.pad_target {
            spec.pad_target = true;
        }
        if let Some(v) = self.symbols {
            spec.symbols = v;
        }
    }

    /// `base` with the task switched (to its defaults) and fields overridden.
    pub fn spec(&self, base: Option<DatasetSpec>) -> Result<Option<DatasetSpec>> {
        let mut spec = match (self.task, base) {
            (Some(t), Some(b)) if b.task == t => Some(b),
            (Some(t), _) => Some(DatasetSpec::defaults(t)),
            (None, b) => b,
        };
        if let Some(s) = spec.as_mut() {
            self.patch_spec(s);
        }
        Ok(spec)
    }

    pub fn source(&self, base: Option<DataSource>) -> Result<DataSource> {
        if let (Some(train), Some(test)) = (&self.train_tsv, &self.test_tsv) {
            return Ok(DataSource::Tsv { train: train.clone(), test: test.clone(), name: self.data_name.clone() });
        }
        match base {
            Some(DataSource::Tsv { train, test, name }) if self.task.is_none() => {
                Ok(DataSource::Tsv { train, test, name: self.data_name.clone().or(name) })
            }
            Some(DataSource::Generated(s)) => Ok(DataSource::Generated(self.spec(Some(s))?.unwrap())),
            _ => match self.spec(None)? {
                Some(s) => Ok(DataSource::Generated(s)),
                None => bail!("no dataset: pass --task, --train-tsv/--test-tsv or a --config with `data`"),
            },
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Named presets applied in order before other model flags
    /// (`small-2`, `large-6s`, `rel2-eb-c`, ...).
    #[arg(long, value_delimiter = ',')]
    pub preset: Vec<String>,
    /// abs, rel-e, rel-b, rel-eb, rel2-e, rel2-b, rel2-eb.
    #[arg(long)]
    pub encoding: Option<Encoding>,
    #[arg(long)]
    pub copy_decoder: bool,
    #[arg(long)]
    pub share_layers: bool,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dmodel: Option<usize>,
    #[arg(long)]
    pub dff: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Relative-position clipping radius.
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// `seq2seq` or `tagging`.
    #[arg(long, value_parser = parse_named::<Mode>)]
    pub mode: Option<Mode>,
    /// `absolute`, `relative` or `attention`.
    #[arg(long, value_parser = parse_named::<ParentHead>)]
    pub parent_head: Option<ParentHead>,
}

impl ModelArgs {
    pub fn apply(&self, m: &mut ModelConfig) -> Result<()> {
        for p in &self.preset {
            *m = m.clone().apply_name(p)?;
        }
        if let Some(v) = self.encoding {
            m.encoding = v;
        }
        if self.copy_decoder {
            m.copy_decoder = true;
        }
        if self.share_layers {
            m.share_layers = true;
        }
        if let Some(v) = self.layers {
            m.layers = v;
        }
        if let Some(v) = self.dmodel {
            m.d_model = v;
        }
        if let Some(v) = self.dff {
            m.d_ff = v;
        }
        if let Some(v) = self.heads {
            m.heads = v;
        }
        if let Some(v) = self.radius {
            m.radius = v;
        }
        if let Some(v) = self.max_len {
            m.max_len = v;
        }
        if let Some(v) = self.mode {
            m.mode = v;
        }
        if let Some(v) = self.parent_head {
            m.parent_head = v;
        }
        Ok(())
    }
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning-rate warmup steps.
    #[arg(long)]
    pub warmup: Option<usize>,
}

impl TrainArgs {
    pub fn apply(&self, t: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.warmup {
            t.warmup = v;
        }
    }
}

/// Config file (if any) overlaid with flags.
pub fn experiment(
    config: Option<&Path>,
    data: &DataArgs,
    model: &ModelArgs,
    train: &TrainArgs,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut value = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<Value>(&text).with_context(|| p.display().to_string())?
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        bail!("experiment config must be a JSON object");
    }
    let base_data = match value.get("data") {
        Some(d) => Some(serde_json::from_value::<DataSource>(d.clone()).context("config `data`")?),
        None => None,
    };
    value["data"] = serde_json::to_value(data.source(base_data)?)?;
    if let Some(o) = out {
        value["output_dir"] = Value::String(o.display().to_string());
    } else if value.get("output_dir").is_none() {
        value["output_dir"] = Value::String("runs".into());
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).context("experiment config")?;
    model.apply(&mut cfg.model)?;
    train.apply(&mut cfg.train);
    Ok(cfg)
}

/// Expands `all` to the seven encodings.
pub fn variant_list(names: &[String]) -> Vec<String> {
    names
        .iter()
        .flat_map(|n| match n.as_str() {
            "all" => Encoding::ALL.iter().map(|e| e.name().to_string()).collect(),
            _ => vec![n.clone()],
        })
        .collect()
}
