//! Teacher-forced training with Adam and the inverse-square-root schedule.

mod optim;

pub use optim::{noam_lr, AdamConfig, OptimizerState};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mode, Seq2SeqBatch, TaggedIds, TaggingBatch, Transformer};
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1, batch_size: 64, warmup: 4000 }
    }
}

/// Training examples as token ids (no specials).
#[derive(Clone, Copy, Debug)]
pub enum TrainSet<'a> {
    Seq2Seq(&'a [(Vec<usize>, Vec<usize>)]),
    Tagging(&'a [TaggedIds]),
}

impl TrainSet<'_> {
    pub fn len(&self) -> usize {
        match self {
            TrainSet::Seq2Seq(d) => d.len(),
            TrainSet::Tagging(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl StepLog {
    pub fn write_line(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{}\t{:.6e}\t{:.6}", self.step, self.lr, self.loss)
    }
}

/// Number of optimizer steps `train` will take.
pub fn total_steps(examples: usize, cfg: &TrainConfig) -> usize {
    cfg.epochs * examples.div_ceil(cfg.batch_size)
}

fn check_lengths(model: &Transformer<f32>, data: TrainSet) -> Result<()> {
    let max = model.config().max_len;
    let too_long = |len: usize| if len > max { Err(Error::TooLong { len, max }) } else { Ok(()) };
    match data {
        TrainSet::Seq2Seq(d) => {
            if model.config().mode != Mode::Seq2seq {
                return Err(Error::WrongMode { expected: "seq2seq" });
            }
            for (s, t) in d {
                too_long(s.len())?;
                // decoder input carries BOS, labels carry EOS
                too_long(t.len() + 1)?;
            }
        }
        TrainSet::Tagging(d) => {
            if model.config().mode != Mode::Tagging {
                return Err(Error::WrongMode { expected: "tagging" });
            }
            for e in d {
                too_long(e.src.len())?;
            }
        }
    }
    Ok(())
}

/// Trains `model` in place and returns the per-step log. `observer` sees
/// every step after the update (for logging or checkpoints).
pub fn train(
    model: &mut Transformer<f32>,
    data: TrainSet,
    cfg: &TrainConfig,
    seed: u64,
    mut observer: Option<&mut dyn FnMut(&StepLog, &Transformer<f32>) -> Result<()>>,
) -> Result<Vec<StepLog>> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    check_lengths(model, data)?;
    let d = model.config().d_model;
    let mut opt = OptimizerState::new(model.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(total_steps(data.len(), cfg));
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = noam_lr(step, d, cfg.warmup)?;
            let mut g = Graph::new();
            let loss = match data {
                TrainSet::Seq2Seq(pairs) => {
                    let rows: Vec<(&[usize], &[usize])> =
                        chunk.iter().map(|&i| (&pairs[i].0[..], &pairs[i].1[..])).collect();
                    model.seq2seq_loss(&mut g, &Seq2SeqBatch::new(&rows))?
                }
                TrainSet::Tagging(items) => {
                    let rows: Vec<&TaggedIds> = chunk.iter().map(|&i| &items[i]).collect();
                    let c = model.config();
                    model.tagging_loss(&mut g, &TaggingBatch::new(&rows, c.parent_head, c.max_len))?
                }
            };
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(step));
            }
            g.backward(loss)?;
            opt.update(model.params_mut(), &g.param_grads(), lr)?;
            let entry = StepLog { step, lr, loss: value };
            if let Some(obs) = observer.as_deref_mut() {
                obs(&entry, model)?;
            }
            log.push(entry);
        }
    }
    Ok(log)
}
