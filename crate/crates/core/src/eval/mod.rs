//! Greedy decoding, accuracy metrics, aggregation and result tables.

mod report;

pub use report::{aggregate, summary_table, Aggregate, RunResult, Stat, SummaryRow, SummaryTable};

use crate::error::{Error, Result};
use crate::model::{Mode, TaggedIds, TaggingBatch, Transformer, BOS, EOS, PAD};
use crate::tensor::{Graph, Real, Tensor};

/// Greedy output of one source. `tokens` excludes EOS; `truncated` is set
/// when the cap was hit before EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

/// Index of the largest entry, lowest index on ties, skipping PAD and BOS.
fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = EOS;
    for (i, &v) in row.iter().enumerate().skip(EOS + 1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<T: Real>(model: &Transformer<T>, src: &[usize]) -> Result<Decoded> {
    Ok(greedy_decode_batch(model, &[src])?.remove(0))
}

/// Decodes a batch of sources in lockstep until every row has emitted EOS
/// or the cap `2·max_len + 4` is reached.
pub fn greedy_decode_batch<T: Real>(model: &Transformer<T>, srcs: &[&[usize]]) -> Result<Vec<Decoded>> {
    if model.config().mode != Mode::Seq2seq {
        return Err(Error::WrongMode { expected: "seq2seq" });
    }
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let b = srcs.len();
    let s = srcs.iter().map(|x| x.len()).max().unwrap();
    let mut src = vec![PAD; b * s];
    let mut mask = vec![false; b * s];
    for (r, x) in srcs.iter().enumerate() {
        if x.is_empty() {
            return Err(Error::Data("empty source".into()));
        }
        src[r * s..r * s + x.len()].copy_from_slice(x);
        mask[r * s..r * s + x.len()].iter_mut().for_each(|m| *m = true);
    }
    let enc = model.encode_tensor(&src, &mask, b, s)?;
    let d = enc.cols();
    let cap = model.config().decode_cap();
    let mut out: Vec<Decoded> = (0..b).map(|_| Decoded { tokens: Vec::new(), truncated: true }).collect();
    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; b];
    // Rows still decoding; finished rows are dropped from later steps.
    let mut active: Vec<usize> = (0..b).collect();
    for _ in 0..cap {
        let (enc_a, src_a, mask_a) = if active.len() == b {
            (enc.clone(), src.clone(), mask.clone())
        } else {
            let mut e = Vec::with_capacity(active.len() * s * d);
            let mut sa = Vec::with_capacity(active.len() * s);
            let mut ma = Vec::with_capacity(active.len() * s);
            for &r in &active {
                e.extend_from_slice(&enc.data()[r * s * d..(r + 1) * s * d]);
                sa.extend_from_slice(&src[r * s..(r + 1) * s]);
                ma.extend_from_slice(&mask[r * s..(r + 1) * s]);
            }
            (Tensor::new(vec![active.len() * s, d], e)?, sa, ma)
        };
        let t = prefixes[active[0]].len();
        let flat: Vec<usize> = active.iter().flat_map(|&r| prefixes[r].iter().copied()).collect();
        let probs = model.next_distributions(&enc_a, &src_a, &mask_a, s, &flat, t)?;
        let mut still = Vec::with_capacity(active.len());
        for (i, &r) in active.iter().enumerate() {
            let next = argmax(probs.row(i));
            prefixes[r].push(next);
            if next == EOS {
                out[r].truncated = false;
            } else {
                out[r].tokens.push(next);
                still.push(r);
            }
        }
        active = still;
        if active.is_empty() {
            break;
        }
    }
    Ok(out)
}

/// Per-example exact-match flags; truncated decodes are wrong.
pub fn correctness(decoded: &[Decoded], targets: &[Vec<usize>]) -> Result<Vec<bool>> {
    if decoded.len() != targets.len() {
        return Err(Error::Eval(format!("{} predictions for {} targets", decoded.len(), targets.len())));
    }
    Ok(decoded.iter().zip(targets).map(|(d, t)| !d.truncated && d.tokens == *t).collect())
}

/// Fraction of predictions equal to their target in full.
pub fn sequence_accuracy<S: PartialEq>(predictions: &[Vec<S>], targets: &[Vec<S>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Eval(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    if predictions.is_empty() {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    let hits = predictions.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-token class predictions of the five tagging heads.
pub type TagPrediction = [Vec<usize>; 5];

/// Per-example flags: every head right at every token.
pub fn tagging_correctness(predictions: &[TagPrediction], targets: &[TagPrediction]) -> Result<Vec<bool>> {
    if predictions.len() != targets.len() {
        return Err(Error::Eval(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    predictions
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (p, t))| {
            let n = t[0].len();
            if p.iter().chain(t.iter()).any(|h| h.len() != n) {
                return Err(Error::Eval(format!("example {i}: head lengths differ")));
            }
            Ok(p == t)
        })
        .collect()
}

pub fn tagging_accuracy(predictions: &[TagPrediction], targets: &[TagPrediction]) -> Result<f64> {
    let flags = tagging_correctness(predictions, targets)?;
    if flags.is_empty() {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    Ok(flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
}

/// Class targets of one tagging example, in the model's parent encoding.
pub fn tag_targets<T: Real>(model: &Transformer<T>, item: &TaggedIds) -> TagPrediction {
    let c = model.config();
    let b = TaggingBatch::new(&[item], c.parent_head, c.max_len);
    b.targets
}

/// Argmax class per token for each head.
pub fn predict_tags<T: Real>(model: &Transformer<T>, items: &[&TaggedIds]) -> Result<Vec<TagPrediction>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let c = model.config();
    let batch = TaggingBatch::new(items, c.parent_head, c.max_len);
    let mut g = Graph::inference();
    let heads = model.forward_tagging(&mut g, &batch.src, &batch.mask, batch.size, batch.len)?;
    let mut out: Vec<TagPrediction> = items.iter().map(|_| Default::default()).collect();
    for (k, &h) in heads.iter().enumerate() {
        let probs = g.value(h);
        for (r, item) in items.iter().enumerate() {
            for j in 0..item.src.len() {
                let row = probs.row(r * batch.len + j);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                out[r][k].push(best);
            }
        }
    }
    Ok(out)
}
