//! `compgen`: generate datasets, train, evaluate and run experiment grids.

mod resolve;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use compgen::data::{generate, write_splits, DatasetSpec};
use compgen::experiment::{
    evaluate, load_data, resolve_output, run_experiment, sweep, test_corpus_for, train_model, SweepConfig, Variant,
};
use compgen::eval::RunResult;
use compgen::model::{checkpoint, Mode, ModelConfig, Transformer, Vocabulary};

use resolve::{DataArgs, ModelArgs, TrainArgs};

// stdout writes that surface errors instead of panicking on a closed pipe
macro_rules! out {
    ($($t:tt)*) => { writeln!(std::io::stdout().lock(), $($t)*)? };
}

macro_rules! out_raw {
    ($($t:tt)*) => { write!(std::io::stdout().lock(), $($t)*)? };
}

#[derive(Parser, Debug)]
#[command(
    name = "compgen",
    version,
    about = "Compositional-generalization experiments with small transformers",
    after_help = "Relative output directories resolve against $COMPGEN_OUTPUT_ROOT when it is set."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write `<task>.{train,test}.tsv` plus a JSON sidecar.
    GenData(GenDataArgs),
    /// Train one model and save its checkpoint.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalCmd),
    /// Train and evaluate every repetition of an experiment.
    Run(RunCmd),
    /// Run a grid of model variants and print the merged table.
    Sweep(SweepCmd),
    /// Print the parameter count of a model configuration.
    ParamCount(ParamCountCmd),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Dataset spec (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
    /// Output directory, resolved against $COMPGEN_OUTPUT_ROOT when relative.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Model initialization and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where to write the per-step loss log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Write a RunResult JSON with the per-example correctness bitmap here.
    #[arg(long)]
    result: Option<PathBuf>,
    /// Seed recorded in the RunResult.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Config label recorded in the RunResult (default: the model's variant name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct RunCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Base seed; repetition r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Row label in the summary table.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Skip writing checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
}

#[derive(Args, Debug)]
struct SweepCmd {
    /// Sweep config (JSON): base experiment, variants, optional datasets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment config used as the base when no sweep config is given.
    #[arg(long, conflicts_with = "config")]
    base: Option<PathBuf>,
    /// Comma-separated preset variants (e.g. `abs,rel-e,rel2-eb-c`); `all`
    /// expands to the seven encodings.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct ParamCountCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Vocabulary size including PAD/BOS/EOS, when no dataset is given.
    #[arg(long)]
    vocab_size: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::ParamCount(a) => param_count(a),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    out!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => Some(serde_json::from_str::<DatasetSpec>(&std::fs::read_to_string(p)?).with_context(|| p.display().to_string())?),
        None => None,
    };
    let spec = a.data.spec(base)?.context("gen-data needs --task or --config")?;
    spec.validate()?;
    if a.dry_run {
        return print_json(&spec);
    }
    let out = resolve_output(&a.out);
    let splits = generate(&spec)?;
    write_splits(&out, &spec, &splits)?;
    out!("wrote {} train / {} test examples to {}", splits.train.len(), splits.test.len(), out.display());
    Ok(())
}

fn train_cmd(a: TrainCmd) -> Result<()> {
    let mut cfg = resolve::experiment(a.common.config.as_deref(), &a.data, &a.model, &a.train, None)?;
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    if a.common.dry_run {
        return print_json(&cfg);
    }
    let data = load_data(&cfg.data, cfg.model.mode)?;
    let trained = train_model(&cfg.model, &cfg.train, &data, cfg.base_seed, a.log.as_deref())?;
    checkpoint::save(&trained.model, &a.checkpoint)?;
    let last = trained.log.last().map_or(f64::NAN, |l| l.loss);
    out!("{} steps, final loss {last:.6}, checkpoint {}", trained.log.len(), a.checkpoint.display());
    Ok(())
}

fn eval_cmd(a: EvalCmd) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint).with_context(|| a.checkpoint.display().to_string())?;
    let cfg = resolve::experiment(a.common.config.as_deref(), &a.data, &ModelArgs::default(), &TrainArgs::default(), None)?;
    if a.common.dry_run {
        return print_json(&cfg.data);
    }
    let corpus = test_corpus_for(&model, &cfg.data)?;
    if corpus.is_empty() {
        bail!("test set is empty");
    }
    let flags = evaluate(&model, &corpus, a.batch_size)?;
    let name = a.name.unwrap_or_else(|| model.config().variant_name());
    let result = RunResult::new(cfg.data.name(), name, a.seed, flags)?;
    out!("accuracy {:.6} ({} / {})", result.accuracy, result.correct.iter().filter(|&&c| c).count(), result.correct.len());
    if let Some(p) = a.result {
        std::fs::write(&p, serde_json::to_string_pretty(&result)?)?;
    }
    Ok(())
}

fn run_cmd(a: RunCmd) -> Result<()> {
    let mut cfg = resolve::experiment(a.common.config.as_deref(), &a.data, &a.model, &a.train, a.out.as_deref())?;
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if a.name.is_some() {
        cfg.name = a.name;
    }
    if a.no_checkpoints {
        cfg.save_checkpoints = false;
    }
    cfg.validate()?;
    if a.common.dry_run {
        return print_json(&cfg);
    }
    let summary = run_experiment(&cfg)?;
    out_raw!("{}", summary.table.to_markdown());
    out!(
        "mean {:.4}  max {:.4}  stddev {:.4}  ({} runs, output {})",
        summary.aggregate.mean,
        summary.aggregate.max,
        summary.aggregate.stddev,
        summary.aggregate.runs,
        cfg.resolved_output_dir().display()
    );
    Ok(())
}

fn sweep_cmd(a: SweepCmd) -> Result<()> {
    let mut cfg = match (&a.config, &a.base) {
        (Some(p), _) => SweepConfig::from_json(&std::fs::read_to_string(p)?).with_context(|| p.display().to_string())?,
        (None, Some(b)) => SweepConfig {
            base: serde_json::from_str(&std::fs::read_to_string(b)?).with_context(|| b.display().to_string())?,
            variants: Vec::new(),
            datasets: Vec::new(),
            output_dir: PathBuf::from("sweep"),
            stat: compgen::eval::Stat::Mean,
        },
        (None, None) => bail!("sweep needs --config or --base"),
    };
    if !a.variants.is_empty() {
        cfg.variants = resolve::variant_list(&a.variants).into_iter().map(|v| Variant::preset(&v)).collect();
    }
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    let cells = cfg.expand()?;
    if a.dry_run {
        return print_json(&cells);
    }
    let outcome = sweep(&cfg)?;
    out_raw!("{}", outcome.table.to_markdown());
    Ok(())
}

fn param_count(a: ParamCountCmd) -> Result<()> {
    let has_data = a.common.config.is_some() || a.data.is_set();
    let (model_cfg, vocab, tags) = if has_data {
        let cfg = resolve::experiment(a.common.config.as_deref(), &a.data, &a.model, &TrainArgs::default(), None)?;
        if a.common.dry_run {
            return print_json(&cfg.model);
        }
        let data = load_data(&cfg.data, cfg.model.mode)?;
        (cfg.model, data.vocab, data.tags)
    } else {
        let n = a.vocab_size.context("param-count needs --vocab-size, --task, --train-tsv or --config")?;
        if n < 3 {
            bail!("--vocab-size counts PAD/BOS/EOS and must be at least 3");
        }
        let mut model = ModelConfig::default();
        a.model.apply(&mut model)?;
        if model.mode != Mode::Seq2seq {
            bail!("tagging models need a dataset for their label sets");
        }
        if a.common.dry_run {
            return print_json(&model);
        }
        (model, Vocabulary::new((0..n - 3).map(|i| format!("t{i}"))), None)
    };
    let model = Transformer::<f32>::new(model_cfg, vocab, tags, 0)?;
    out!("{}", model.parameter_count());
    Ok(())
}
