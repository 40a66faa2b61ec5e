use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{Seq2SeqBatch, TaggingBatch};
use super::config::{CopyGate, Mode, ModelConfig, ParentHead};
use super::position::{label_matrix, sinusoidal_encoding};
use super::vocab::{LabelSet, Vocabulary, BOS};
use crate::error::{Error, Result};
use crate::tensor::init::{init_dense, init_embedding};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;
/// Floor applied to probabilities before the log in the copy-decoder loss.
pub const PROB_CLAMP: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    /// `[2r+1, d/h]`, shared across heads.
    rel_emb: Option<ParamId>,
    /// `[h, 2r+1]`.
    rel_bias: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
struct EncLayer {
    attn: AttnIds,
    norm1: Norm,
    ff1: Dense,
    ff2: Dense,
    norm2: Norm,
}

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    self_attn: AttnIds,
    norm1: Norm,
    cross: AttnIds,
    norm2: Norm,
    ff1: Dense,
    ff2: Dense,
    norm3: Norm,
}

#[derive(Clone, Copy, Debug)]
struct CopyIds {
    query: ParamId,
    gate_w: Option<ParamId>,
    gate_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
enum ParentIds {
    Classifier(Dense),
    Attention { q: Dense, k: Dense, none: ParamId },
}

#[derive(Clone, Copy, Debug)]
struct TagIds {
    parent: ParentIds,
    labels: [Dense; 4],
}

#[derive(Clone, Debug)]
struct Layout {
    src_emb: ParamId,
    encoder: Vec<EncLayer>,
    tgt_emb: Option<ParamId>,
    decoder: Vec<DecLayer>,
    out: Option<Dense>,
    copy: Option<CopyIds>,
    tagging: Option<TagIds>,
}

struct Builder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = self.store.add(format!("{name}.kernel"), init_dense(fan_in, fan_out, self.rng));
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Dense { w, b }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        let gain = self
            .store
            .add(format!("{name}.gain"), Tensor::from_fn(vec![d], |_| T::one()));
        let bias = self.store.add(format!("{name}.bias"), Tensor::zeros(vec![d]));
        Norm { gain, bias }
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, init_embedding(rows, cols, self.rng))
    }

    fn attention(&mut self, name: &str, c: &ModelConfig, relative: bool) -> AttnIds {
        let d = c.d_model;
        let q = self.dense(&format!("{name}.query"), d, d);
        let k = self.dense(&format!("{name}.key"), d, d);
        let v = self.dense(&format!("{name}.value"), d, d);
        let o = self.dense(&format!("{name}.output"), d, d);
        let rel_emb = (relative && c.encoding.rel_embedding())
            .then(|| self.embedding(&format!("{name}.rel_embedding"), c.num_labels(), c.head_dim()));
        let rel_bias = (relative && c.encoding.rel_bias())
            .then(|| self.embedding(&format!("{name}.rel_bias"), c.heads, c.num_labels()));
        AttnIds {
            q,
            k,
            v,
            o,
            rel_emb,
            rel_bias,
        }
    }

    fn encoder_layer(&mut self, name: &str, c: &ModelConfig) -> EncLayer {
        EncLayer {
            attn: self.attention(&format!("{name}.self_attention"), c, c.encoding.is_relative()),
            norm1: self.norm(&format!("{name}.norm1"), c.d_model),
            ff1: self.dense(&format!("{name}.ff1"), c.d_model, c.d_ff),
            ff2: self.dense(&format!("{name}.ff2"), c.d_ff, c.d_model),
            norm2: self.norm(&format!("{name}.norm2"), c.d_model),
        }
    }

    fn decoder_layer(&mut self, name: &str, c: &ModelConfig) -> DecLayer {
        DecLayer {
            self_attn: self.attention(&format!("{name}.self_attention"), c, c.encoding.is_relative()),
            norm1: self.norm(&format!("{name}.norm1"), c.d_model),
            cross: self.attention(&format!("{name}.cross_attention"), c, c.encoding.relative_cross()),
            norm2: self.norm(&format!("{name}.norm2"), c.d_model),
            ff1: self.dense(&format!("{name}.ff1"), c.d_model, c.d_ff),
            ff2: self.dense(&format!("{name}.ff2"), c.d_ff, c.d_model),
            norm3: self.norm(&format!("{name}.norm3"), c.d_model),
        }
    }
}

fn stack<L: Copy>(c: &ModelConfig, prefix: &str, mut make: impl FnMut(&str) -> L) -> Vec<L> {
    if c.share_layers {
        let layer = make(&format!("{prefix}.shared"));
        vec![layer; c.layers]
    } else {
        (0..c.layers).map(|i| make(&format!("{prefix}.layer{i}"))).collect()
    }
}

/// Label sets of the four categorical tagging heads: role, category, noun
/// determiner and verb name.
pub type TagLabels = [LabelSet; 4];

/// Number of classes of the parent head for a given padded width.
pub fn parent_classes(c: &ModelConfig, width: usize) -> usize {
    match c.parent_head {
        ParentHead::Absolute => c.max_len + 1,
        ParentHead::Relative => 2 * c.max_len + 1,
        ParentHead::Attention => width + 1,
    }
}

/// Graph handles produced by one decoder pass.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOut {
    /// Final decoder states `[b·t, d]`.
    pub hidden: Var,
    /// Output projection `[b·t, V]`.
    pub logits: Var,
    /// Softmax of `logits`, the generator distribution.
    pub p1: Var,
    /// Copy distribution, gate and mixture when the copy decoder is on.
    pub copy: Option<CopyOut>,
}

impl DecoderOut {
    /// The distribution the model predicts with.
    pub fn probs(&self) -> Var {
        self.copy.map_or(self.p1, |c| c.mixed)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CopyOut {
    pub attention: Var,
    pub p2: Var,
    pub gate: Var,
    pub mixed: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderOut {
    /// `[b·s, d]`.
    pub hidden: Var,
    /// Per-layer self-attention weights `[b·h, s, s]`.
    pub attention: Vec<Var>,
}

/// Encoder-decoder (or encoder-only tagging) transformer.
#[derive(Clone, Debug)]
pub struct Transformer<T> {
    config: ModelConfig,
    vocab: Vocabulary,
    tags: Option<TagLabels>,
    params: ParamStore<T>,
    layout: Layout,
}

fn full_mask(b: usize, heads: usize, tq: usize, tk: usize, keep: impl Fn(usize, usize, usize) -> bool) -> Vec<bool> {
    let mut m = Vec::with_capacity(b * heads * tq * tk);
    for bi in 0..b {
        for _ in 0..heads {
            for i in 0..tq {
                for j in 0..tk {
                    m.push(keep(bi, i, j));
                }
            }
        }
    }
    m
}

impl<T: Real> Transformer<T> {
    /// Builds a freshly initialized model. Tagging models need `tags`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, tags: Option<TagLabels>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.mode == Mode::Tagging && tags.is_none() {
            return Err(Error::Config("tagging mode needs tag label sets".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let c = &config;
        let v = vocab.len();
        let d = c.d_model;
        let src_emb = b.embedding("encoder.embedding", v, d);
        let encoder = stack(c, "encoder", |n| b.encoder_layer(n, c));
        let layout = match c.mode {
            Mode::Seq2seq => {
                let tgt_emb = Some(b.embedding("decoder.embedding", v, d));
                let decoder = stack(c, "decoder", |n| b.decoder_layer(n, c));
                let out = Some(b.dense("decoder.output", d, v));
                let copy = c.copy_decoder.then(|| CopyIds {
                    query: b.store.add("copy.query.kernel", init_dense(d, d, b.rng)),
                    gate_w: (c.copy_gate == CopyGate::PerStep)
                        .then(|| b.store.add("copy.gate.kernel", init_dense(d, 1, b.rng))),
                    gate_b: b.store.add("copy.gate.bias", Tensor::zeros(vec![1])),
                });
                Layout {
                    src_emb,
                    encoder,
                    tgt_emb,
                    decoder,
                    out,
                    copy,
                    tagging: None,
                }
            }
            Mode::Tagging => {
                let sets = tags.as_ref().expect("checked above");
                let parent = match c.parent_head {
                    ParentHead::Attention => ParentIds::Attention {
                        q: b.dense("tagging.parent.query", d, d),
                        k: b.dense("tagging.parent.key", d, d),
                        none: b.store.add("tagging.parent.none", Tensor::zeros(vec![1])),
                    },
                    _ => ParentIds::Classifier(b.dense("tagging.parent", d, parent_classes(c, 0))),
                };
                let names = ["role", "category", "noun_determiner", "verb_name"];
                let labels = std::array::from_fn(|k| b.dense(&format!("tagging.{}", names[k]), d, sets[k].len().max(1)));
                Layout {
                    src_emb,
                    encoder,
                    tgt_emb: None,
                    decoder: Vec::new(),
                    out: None,
                    copy: None,
                    tagging: Some(TagIds { parent, labels }),
                }
            }
        };
        Ok(Self {
            config,
            vocab,
            tags,
            params: store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tag_labels(&self) -> Option<&TagLabels> {
        self.tags.as_ref()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Distinct trainable scalars; shared layers count once.
    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same model with every parameter converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Transformer<U> {
        Transformer {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tags: self.tags.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, d: Dense) -> Result<Var> {
        let w = g.param(&self.params, d.w);
        let b = g.param(&self.params, d.b);
        let y = g.matmul(x, w, false)?;
        Ok(g.add_bias(y, b)?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, n: Norm) -> Result<Var> {
        let gain = g.param(&self.params, n.gain);
        let bias = g.param(&self.params, n.bias);
        Ok(g.layer_norm(x, gain, bias, LAYER_NORM_EPS)?)
    }

    fn feed_forward(&self, g: &mut Graph<T>, x: Var, ff1: Dense, ff2: Dense) -> Result<Var> {
        let h = self.linear(g, x, ff1)?;
        let h = g.relu(h);
        self.linear(g, h, ff2)
    }

    /// Token embeddings scaled by `sqrt(d)`, plus sinusoidal encodings for `abs`.
    fn embed(&self, g: &mut Graph<T>, table: ParamId, ids: &[usize], len: usize) -> Result<Var> {
        let d = self.config.d_model;
        let t = g.param(&self.params, table);
        let e = g.embedding(t, ids)?;
        let e = g.scale(e, T::lit((d as f64).sqrt()));
        if !self.config.encoding.is_relative() {
            let rows: Vec<Vec<f64>> = (0..len).map(|p| sinusoidal_encoding(p, d)).collect();
            let pe = Tensor::from_fn(vec![ids.len(), d], |i| T::lit(rows[(i / d) % len][i % d]));
            let pe = g.constant(pe);
            return Ok(g.add(e, pe)?);
        }
        Ok(e)
    }

    /// Multi-head attention of `xq: [b·tq, d]` over `xkv: [b·tk, d]`. Returns
    /// the projected output and the attention weights `[b·h, tq, tk]`.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph<T>,
        ids: &AttnIds,
        xq: Var,
        xkv: Var,
        b: usize,
        tq: usize,
        tk: usize,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        let (h, dk) = (c.heads, c.head_dim());
        let split = |g: &mut Graph<T>, x: Var, t: usize| -> Result<Var> {
            let x = g.reshape(x, vec![b, t, h, dk])?;
            let x = g.swap_axes12(x)?;
            Ok(g.reshape(x, vec![b * h, t, dk])?)
        };
        let q = self.linear(g, xq, ids.q)?;
        let k = self.linear(g, xkv, ids.k)?;
        let v = self.linear(g, xkv, ids.v)?;
        let q = split(g, q, tq)?;
        let k = split(g, k, tk)?;
        let v = split(g, v, tk)?;
        let labels = (ids.rel_emb.is_some() || ids.rel_bias.is_some()).then(|| label_matrix(tq, tk, c.radius));
        let mut logits = g.matmul(q, k, true)?;
        if let Some(e) = ids.rel_emb {
            let e = g.param(&self.params, e);
            let qe = g.matmul(q, e, true)?;
            let rel = g.rel_gather(qe, labels.as_ref().unwrap(), tq, tk)?;
            logits = g.add(logits, rel)?;
        }
        logits = g.scale(logits, T::lit(1.0 / (dk as f64).sqrt()));
        if let Some(bias) = ids.rel_bias {
            let table = g.param(&self.params, bias);
            let l4 = g.reshape(logits, vec![b, h, tq, tk])?;
            let l4 = g.rel_bias(l4, table, labels.as_ref().unwrap(), tq, tk)?;
            logits = g.reshape(l4, vec![b * h, tq, tk])?;
        }
        let probs = g.softmax(logits, Some(mask))?;
        let ctx = g.matmul(probs, v, false)?;
        let ctx = g.reshape(ctx, vec![b, h, tq, dk])?;
        let ctx = g.swap_axes12(ctx)?;
        let ctx = g.reshape(ctx, vec![b * tq, c.d_model])?;
        let out = self.linear(g, ctx, ids.o)?;
        Ok((out, probs))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::TooLong {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Encoder over padded `src: [b, s]`.
    pub fn encode(&self, g: &mut Graph<T>, src: &[usize], src_mask: &[bool], b: usize, s: usize) -> Result<EncoderOut> {
        self.check_len(s)?;
        let mut x = self.embed(g, self.layout.src_emb, src, s)?;
        let mask = full_mask(b, self.config.heads, s, s, |bi, _, j| src_mask[bi * s + j]);
        let mut attention = Vec::with_capacity(self.layout.encoder.len());
        for layer in &self.layout.encoder {
            let (a, p) = self.attention(g, &layer.attn, x, x, b, s, s, &mask)?;
            attention.push(p);
            let r = g.add(x, a)?;
            x = self.norm(g, r, layer.norm1)?;
            let f = self.feed_forward(g, x, layer.ff1, layer.ff2)?;
            let r = g.add(x, f)?;
            x = self.norm(g, r, layer.norm2)?;
        }
        Ok(EncoderOut { hidden: x, attention })
    }

    /// Decoder over `tgt_in: [b, t]` attending to encoder states `enc: [b·s, d]`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        enc: Var,
        src: &[usize],
        src_mask: &[bool],
        s: usize,
        tgt_in: &[usize],
        tgt_mask: &[bool],
        t: usize,
    ) -> Result<DecoderOut> {
        let c = &self.config;
        let (Some(tgt_emb), Some(out)) = (self.layout.tgt_emb, self.layout.out) else {
            return Err(Error::WrongMode { expected: "seq2seq" });
        };
        let b = tgt_in.len() / t;
        let mut y = self.embed(g, tgt_emb, tgt_in, t)?;
        let self_mask = full_mask(b, c.heads, t, t, |bi, i, j| j <= i && tgt_mask[bi * t + j]);
        let cross_mask = full_mask(b, c.heads, t, s, |bi, _, j| src_mask[bi * s + j]);
        for layer in &self.layout.decoder {
            let (a, _) = self.attention(g, &layer.self_attn, y, y, b, t, t, &self_mask)?;
            let r = g.add(y, a)?;
            y = self.norm(g, r, layer.norm1)?;
            let (a, _) = self.attention(g, &layer.cross, y, enc, b, t, s, &cross_mask)?;
            let r = g.add(y, a)?;
            y = self.norm(g, r, layer.norm2)?;
            let f = self.feed_forward(g, y, layer.ff1, layer.ff2)?;
            let r = g.add(y, f)?;
            y = self.norm(g, r, layer.norm3)?;
        }
        let logits = self.linear(g, y, out)?;
        let p1 = g.softmax(logits, None)?;
        let copy = match self.layout.copy {
            Some(ids) => Some(self.copy_head(g, ids, y, enc, src, src_mask, b, s, t, p1)?),
            None => None,
        };
        Ok(DecoderOut {
            hidden: y,
            logits,
            p1,
            copy,
        })
    }

    /// Copy distribution over source tokens and its mixture with `p1`.
    #[allow(clippy::too_many_arguments)]
    fn copy_head(
        &self,
        g: &mut Graph<T>,
        ids: CopyIds,
        y: Var,
        enc: Var,
        src: &[usize],
        src_mask: &[bool],
        b: usize,
        s: usize,
        t: usize,
        p1: Var,
    ) -> Result<CopyOut> {
        let d = self.config.d_model;
        let v = self.vocab.len();
        let wq = g.param(&self.params, ids.query);
        let q = g.matmul(y, wq, false)?;
        let q = g.reshape(q, vec![b, t, d])?;
        let keys = g.reshape(enc, vec![b, s, d])?;
        let scores = g.matmul(q, keys, true)?;
        let scores = g.scale(scores, T::lit(1.0 / (d as f64).sqrt()));
        let mask = full_mask(b, 1, t, s, |bi, _, j| src_mask[bi * s + j]);
        let attention = g.softmax(scores, Some(&mask))?;
        let p2 = g.copy_scatter(attention, src, v)?;
        let mut p2 = g.reshape(p2, vec![b * t, v])?;
        if self.config.copy_vocab_softmax {
            p2 = g.softmax(p2, None)?;
        }
        let gb = g.param(&self.params, ids.gate_b);
        let gate = match ids.gate_w {
            Some(w) => {
                let w = g.param(&self.params, w);
                let z = g.matmul(y, w, false)?;
                let z = g.add_bias(z, gb)?;
                let z = g.sigmoid(z);
                g.reshape(z, vec![b * t])?
            }
            None => g.sigmoid(gb),
        };
        let mixed = g.mix(p1, p2, gate)?;
        Ok(CopyOut {
            attention,
            p2,
            gate,
            mixed,
        })
    }

    /// Teacher-forced mean token loss of a seq2seq batch.
    pub fn seq2seq_loss(&self, g: &mut Graph<T>, batch: &Seq2SeqBatch) -> Result<Var> {
        let enc = self.encode(g, &batch.src, &batch.src_mask, batch.size, batch.src_len)?;
        let dec = self.decode(
            g,
            enc.hidden,
            &batch.src,
            &batch.src_mask,
            batch.src_len,
            &batch.tgt_in,
            &batch.tgt_mask,
            batch.tgt_len,
        )?;
        let loss = match dec.copy {
            Some(c) => g.nll_probs(c.mixed, &batch.tgt_out, &batch.tgt_mask, PROB_CLAMP)?,
            None => g.cross_entropy_logits(dec.logits, &batch.tgt_out, &batch.tgt_mask)?,
        };
        Ok(loss)
    }

    /// Encoder states `[b·s, d]` as a plain tensor.
    pub fn encode_tensor(&self, src: &[usize], src_mask: &[bool], b: usize, s: usize) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let enc = self.encode(&mut g, src, src_mask, b, s)?;
        Ok(g.value(enc.hidden).clone())
    }

    /// Predictive distribution `[b, V]` for the token following each prefix.
    /// `prefixes` is `[b, t]` with no padding.
    pub fn next_distributions(
        &self,
        enc: &Tensor<T>,
        src: &[usize],
        src_mask: &[bool],
        s: usize,
        prefixes: &[usize],
        t: usize,
    ) -> Result<Tensor<T>> {
        let b = prefixes.len() / t;
        if (0..b).any(|r| prefixes[r * t] != BOS) {
            return Err(Error::MissingBos);
        }
        let mut g = Graph::inference();
        let e = g.constant(enc.clone());
        let mask = vec![true; prefixes.len()];
        let dec = self.decode(&mut g, e, src, src_mask, s, prefixes, &mask, t)?;
        let probs = g.value(dec.probs());
        let v = probs.cols();
        let mut out = Vec::with_capacity(b * v);
        for r in 0..b {
            out.extend_from_slice(probs.row(r * t + t - 1));
        }
        Ok(Tensor::new(vec![b, v], out)?)
    }

    /// Distribution over the next token for a single BOS-prefixed prefix.
    pub fn decode_step(&self, enc: &Tensor<T>, src: &[usize], prefix: &[usize]) -> Result<Vec<T>> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::MissingBos);
        }
        let mask = vec![true; src.len()];
        let p = self.next_distributions(enc, src, &mask, src.len(), prefix, prefix.len())?;
        Ok(p.into_data())
    }

    /// Copy distribution `p2` and gate `w` for one decoder state `y: [d]`
    /// against encoder states `enc: [s, d]`.
    pub fn copy_distribution(&self, y: &[T], enc: &Tensor<T>, src: &[usize], src_mask: &[bool]) -> Result<(Vec<T>, T)> {
        let ids = self.layout.copy.ok_or(Error::Config("copy decoder is off".into()))?;
        let d = self.config.d_model;
        let mut g = Graph::inference();
        let yv = g.constant(Tensor::new(vec![1, d], y.to_vec())?);
        let e = g.constant(enc.clone());
        let p1 = g.constant(Tensor::from_fn(vec![1, self.vocab.len()], |_| T::zero()));
        let out = self.copy_head(&mut g, ids, yv, e, src, src_mask, 1, src.len(), 1, p1)?;
        let p2 = g.value(out.p2).data().to_vec();
        let w = g.value(out.gate).data()[0];
        Ok((p2, w))
    }

    /// Per-head logits of the tagging model: parent, role, category, noun
    /// determiner, verb name. The attention parent head is `[b·s, s+1]` and
    /// comes with a mask hiding padded key positions.
    pub fn tagging_logits(&self, g: &mut Graph<T>, src: &[usize], mask: &[bool], b: usize, s: usize) -> Result<([Var; 5], Option<Vec<bool>>)> {
        let Some(tag) = self.layout.tagging else {
            return Err(Error::WrongMode { expected: "tagging" });
        };
        let enc = self.encode(g, src, mask, b, s)?;
        let x = enc.hidden;
        let (parent, parent_mask) = match tag.parent {
            ParentIds::Classifier(d) => (self.linear(g, x, d)?, None),
            ParentIds::Attention { q, k, none } => {
                let d = self.config.d_model;
                let qv = self.linear(g, x, q)?;
                let kv = self.linear(g, x, k)?;
                let qv = g.reshape(qv, vec![b, s, d])?;
                let kv = g.reshape(kv, vec![b, s, d])?;
                let scores = g.matmul(qv, kv, true)?;
                let scores = g.scale(scores, T::lit(1.0 / (d as f64).sqrt()));
                let none = g.param(&self.params, none);
                let scores = g.append_col(scores, none)?;
                let scores = g.reshape(scores, vec![b * s, s + 1])?;
                let m = full_mask(b, 1, s, s + 1, |bi, _, j| j == s || mask[bi * s + j]);
                (scores, Some(m))
            }
        };
        let mut heads = [parent; 5];
        for k in 0..4 {
            heads[k + 1] = self.linear(g, x, tag.labels[k])?;
        }
        Ok((heads, parent_mask))
    }

    /// Per-token distributions of the five tagging heads.
    pub fn forward_tagging(&self, g: &mut Graph<T>, src: &[usize], mask: &[bool], b: usize, s: usize) -> Result<[Var; 5]> {
        let (logits, parent_mask) = self.tagging_logits(g, src, mask, b, s)?;
        let mut out = logits;
        out[0] = g.softmax(logits[0], parent_mask.as_deref())?;
        for v in out.iter_mut().skip(1) {
            *v = g.softmax(*v, None)?;
        }
        Ok(out)
    }

    /// Sum of the five per-head token losses, each averaged over non-PAD tokens.
    pub fn tagging_loss(&self, g: &mut Graph<T>, batch: &TaggingBatch) -> Result<Var> {
        let (logits, parent_mask) = self.tagging_logits(g, &batch.src, &batch.mask, batch.size, batch.len)?;
        let mut total = match parent_mask {
            Some(m) => {
                let p = g.softmax(logits[0], Some(&m))?;
                g.nll_probs(p, &batch.targets[0], &batch.mask, PROB_CLAMP)?
            }
            None => g.cross_entropy_logits(logits[0], &batch.targets[0], &batch.mask)?,
        };
        for k in 1..5 {
            let l = g.cross_entropy_logits(logits[k], &batch.targets[k], &batch.mask)?;
            total = g.add(total, l)?;
        }
        Ok(total)
    }
}
