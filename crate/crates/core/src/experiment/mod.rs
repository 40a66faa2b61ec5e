//! Experiment orchestration: data → train → eval over repeated seeds, with
//! every artifact written under one output directory.

mod sweep;

pub use sweep::{merge_json, sweep, SweepConfig, SweepOutcome, Variant};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate, load_tsv_seq2seq, load_tsv_tagging, seq2seq_vocabulary, tagged_ids, tagging_vocabulary,
    task_vocabulary, DatasetSpec, Example,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, correctness, greedy_decode_batch, predict_tags, summary_table, tag_targets, tagging_correctness,
    Aggregate, RunResult, Stat, SummaryTable,
};
use crate::model::{checkpoint, Mode, ModelConfig, TagLabels, TaggedIds, Transformer, Vocabulary};
use crate::train::{train, StepLog, TrainConfig, TrainSet};

/// Environment variable naming the root that relative output directories
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "COMPGEN_OUTPUT_ROOT";

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Generated(DatasetSpec),
    Tsv {
        train: PathBuf,
        test: PathBuf,
        /// Column label in result tables; defaults to the training file stem.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::Generated(spec) => spec.task.name().to_string(),
            DataSource::Tsv { name: Some(n), .. } => n.clone(),
            DataSource::Tsv { train, .. } => train
                .file_stem()
                .map(|s| s.to_string_lossy().trim_end_matches(".train").to_string())
                .unwrap_or_else(|| "tsv".into()),
        }
    }
}

fn default_repetitions() -> usize {
    3
}

fn default_eval_batch() -> usize {
    128
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in result tables; defaults to the model's variant name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, model: ModelConfig, train: TrainConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: None,
            data,
            model,
            train,
            repetitions: default_repetitions(),
            base_seed: 0,
            output_dir: output_dir.into(),
            eval_batch_size: default_eval_batch(),
            save_checkpoints: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn config_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.variant_name())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Experiment("repetitions must be >= 1".into()));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Experiment("eval_batch_size must be >= 1".into()));
        }
        self.model.validate()?;
        if let DataSource::Generated(spec) = &self.data {
            spec.validate()?;
            if self.model.mode != Mode::Seq2seq {
                return Err(Error::Experiment("generated tasks need a seq2seq model".into()));
            }
        }
        Ok(())
    }

    /// Output directory, resolved against `$COMPGEN_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Examples mapped to ids.
#[derive(Clone, Debug)]
pub enum Corpus {
    Seq2Seq(Vec<(Vec<usize>, Vec<usize>)>),
    Tagging(Vec<TaggedIds>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Seq2Seq(d) => d.len(),
            Corpus::Tagging(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_train_set(&self) -> TrainSet<'_> {
        match self {
            Corpus::Seq2Seq(d) => TrainSet::Seq2Seq(d),
            Corpus::Tagging(d) => TrainSet::Tagging(d),
        }
    }

    fn longest_source(&self) -> usize {
        match self {
            Corpus::Seq2Seq(d) => d.iter().map(|(s, _)| s.len()).max().unwrap_or(0),
            Corpus::Tagging(d) => d.iter().map(|e| e.src.len()).max().unwrap_or(0),
        }
    }
}

/// A dataset ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub name: String,
    pub vocab: Vocabulary,
    pub tags: Option<TagLabels>,
    pub train: Corpus,
    pub test: Corpus,
}

fn encode_pairs(vocab: &Vocabulary, examples: &[Example]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    examples.iter().map(|e| Ok((vocab.encode(&e.src)?, vocab.encode(&e.tgt)?))).collect()
}

/// Generates or reads the dataset of `source` for a model in `mode`.
pub fn load_data(source: &DataSource, mode: Mode) -> Result<LoadedData> {
    let name = source.name();
    match (source, mode) {
        (DataSource::Generated(spec), Mode::Seq2seq) => {
            let splits = generate(spec)?;
            let vocab = task_vocabulary(spec);
            let train = Corpus::Seq2Seq(encode_pairs(&vocab, &splits.train)?);
            let test = Corpus::Seq2Seq(encode_pairs(&vocab, &splits.test)?);
            Ok(LoadedData { name, vocab, tags: None, train, test })
        }
        (DataSource::Generated(_), Mode::Tagging) => {
            Err(Error::Experiment("generated tasks need a seq2seq model".into()))
        }
        (DataSource::Tsv { train, test, .. }, Mode::Seq2seq) => {
            let tr = load_tsv_seq2seq(train)?;
            let te = load_tsv_seq2seq(test)?;
            let vocab = seq2seq_vocabulary(tr.iter().chain(&te));
            let train = Corpus::Seq2Seq(encode_pairs(&vocab, &tr)?);
            let test = Corpus::Seq2Seq(encode_pairs(&vocab, &te)?);
            Ok(LoadedData { name, vocab, tags: None, train, test })
        }
        (DataSource::Tsv { train, test, .. }, Mode::Tagging) => {
            let tr = load_tsv_tagging(train)?;
            let te = load_tsv_tagging(test)?;
            let (vocab, labels) = tagging_vocabulary(tr.iter().chain(&te));
            let ids = |d: &[crate::data::TaggedExample]| -> Result<Vec<TaggedIds>> {
                d.iter().map(|e| tagged_ids(e, &vocab, &labels)).collect()
            };
            let train = Corpus::Tagging(ids(&tr)?);
            let test = Corpus::Tagging(ids(&te)?);
            Ok(LoadedData { name, vocab, tags: Some(labels), train, test })
        }
    }
}

/// The test split of `source`, mapped with the vocabulary stored in `model`.
pub fn test_corpus_for(model: &Transformer<f32>, source: &DataSource) -> Result<Corpus> {
    let vocab = model.vocab();
    match (source, model.config().mode) {
        (DataSource::Generated(spec), Mode::Seq2seq) => Ok(Corpus::Seq2Seq(encode_pairs(vocab, &generate(spec)?.test)?)),
        (DataSource::Tsv { test, .. }, Mode::Seq2seq) => Ok(Corpus::Seq2Seq(encode_pairs(vocab, &load_tsv_seq2seq(test)?)?)),
        (DataSource::Tsv { test, .. }, Mode::Tagging) => {
            let labels = model
                .tag_labels()
                .ok_or_else(|| Error::Checkpoint("tagging model without tag labels".into()))?;
            let items = load_tsv_tagging(test)?;
            Ok(Corpus::Tagging(items.iter().map(|e| tagged_ids(e, vocab, labels)).collect::<Result<_>>()?))
        }
        (DataSource::Generated(_), Mode::Tagging) => {
            Err(Error::Experiment("generated tasks need a seq2seq model".into()))
        }
    }
}

/// Per-example correctness of `model` on `corpus`.
pub fn evaluate(model: &Transformer<f32>, corpus: &Corpus, batch_size: usize) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(corpus.len());
    match corpus {
        Corpus::Seq2Seq(pairs) => {
            for chunk in pairs.chunks(batch_size.max(1)) {
                let srcs: Vec<&[usize]> = chunk.iter().map(|(s, _)| &s[..]).collect();
                let targets: Vec<Vec<usize>> = chunk.iter().map(|(_, t)| t.clone()).collect();
                let decoded = greedy_decode_batch(model, &srcs)?;
                flags.extend(correctness(&decoded, &targets)?);
            }
        }
        Corpus::Tagging(items) => {
            for chunk in items.chunks(batch_size.max(1)) {
                let refs: Vec<&TaggedIds> = chunk.iter().collect();
                let preds = predict_tags(model, &refs)?;
                let gold: Vec<_> = chunk.iter().map(|e| tag_targets(model, e)).collect();
                flags.extend(tagging_correctness(&preds, &gold)?);
            }
        }
    }
    Ok(flags)
}

/// Fails unless `dir` exists (or can be created) and accepts a file.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    let fail = |e: std::io::Error| Error::Experiment(format!("output directory {} is not writable: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}

/// Artifacts of one training run.
pub struct TrainedRun {
    pub model: Transformer<f32>,
    pub log: Vec<StepLog>,
}

/// Trains one model on `data` with `seed`, streaming the loss log to `log_path`.
pub fn train_model(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &LoadedData,
    seed: u64,
    log_path: Option<&Path>,
) -> Result<TrainedRun> {
    let mut model = Transformer::new(model_cfg.clone(), data.vocab.clone(), data.tags.clone(), seed)?;
    let mut writer = match log_path {
        Some(p) => Some(BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let mut observer = |entry: &StepLog, _: &Transformer<f32>| -> Result<()> {
        if let Some(w) = writer.as_mut() {
            entry.write_line(w)?;
        }
        Ok(())
    };
    let log = train(&mut model, data.train.as_train_set(), train_cfg, seed, Some(&mut observer))?;
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(TrainedRun { model, log })
}

/// Everything `run_experiment` reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: String,
    pub dataset: String,
    pub aggregate: Aggregate,
    pub runs: Vec<RunSummary>,
    pub table: SummaryTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Paths of the artifacts for repetition seed `seed`.
pub fn run_paths(dir: &Path, config: &str, dataset: &str, seed: u64) -> (PathBuf, PathBuf) {
    let stem = format!("{dataset}__{config}__seed{seed}");
    (dir.join("checkpoints").join(format!("{stem}.ckpt")), dir.join("logs").join(format!("{stem}.log")))
}

/// Runs every repetition of `cfg` and writes run records, checkpoints, loss
/// logs and `summary.{json,csv,md}` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    Ok(run_with_results(cfg)?.0)
}

pub(crate) fn run_with_results(cfg: &ExperimentConfig) -> Result<(ExperimentSummary, Vec<RunResult>)> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    ensure_writable(&dir)?;
    for sub in ["runs", "logs", "checkpoints"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let data = load_data(&cfg.data, cfg.model.mode)?;
    if data.train.is_empty() {
        return Err(Error::Experiment("training set is empty".into()));
    }
    if data.test.is_empty() {
        return Err(Error::Experiment("test set is empty".into()));
    }
    let longest = data.test.longest_source();
    if longest > cfg.model.max_len {
        return Err(Error::TooLong { len: longest, max: cfg.model.max_len });
    }
    let config = cfg.config_name();
    let mut results = Vec::new();
    let mut runs = Vec::new();
    for r in 0..cfg.repetitions {
        let seed = cfg.base_seed + r as u64;
        let (ckpt, log_path) = run_paths(&dir, &config, &data.name, seed);
        let trained = train_model(&cfg.model, &cfg.train, &data, seed, Some(&log_path))?;
        if cfg.save_checkpoints {
            checkpoint::save(&trained.model, &ckpt)?;
        }
        let flags = evaluate(&trained.model, &data.test, cfg.eval_batch_size)?;
        let result = RunResult::new(&data.name, &config, seed, flags)?;
        result.save(&dir.join("runs"))?;
        runs.push(RunSummary {
            seed,
            accuracy: result.accuracy,
            final_loss: trained.log.last().map_or(f64::NAN, |l| l.loss),
            steps: trained.log.len(),
        });
        results.push(result);
    }
    let summary = ExperimentSummary {
        config,
        dataset: data.name.clone(),
        aggregate: aggregate(&results)?,
        runs,
        table: summary_table(&results, Stat::Mean)?,
    };
    write_summary(&dir, &summary)?;
    Ok((summary, results))
}

fn write_summary(dir: &Path, s: &ExperimentSummary) -> Result<()> {
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(s)?)?;
    fs::write(dir.join("summary.csv"), s.table.to_csv())?;
    fs::write(dir.join("summary.md"), s.table.to_markdown())?;
    Ok(())
}
