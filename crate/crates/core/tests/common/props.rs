//! Randomized property checks shared by the unit-style tests and the
//! acceptance harness. Each returns `Err` with a description on violation.

use compgen::model::{
    relative_label, sinusoidal_encoding, Encoding, ModelConfig, Seq2SeqBatch, Transformer, Vocabulary,
};
use compgen::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::toy_vocab;

pub type Check = Result<(), String>;

pub fn toy(encoding: Encoding) -> ModelConfig {
    ModelConfig {
        encoding,
        layers: 2,
        d_model: 8,
        d_ff: 16,
        heads: 2,
        radius: 2,
        max_len: 16,
        ..Default::default()
    }
}

/// Random source over the toy vocabulary's task tokens (ids 3..8).
pub fn random_source(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<usize> {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| rng.gen_range(3..8)).collect()
}

/// Layer-0 encoder attention weights `[h][i][j]` for one sequence.
pub fn encoder_attention(m: &Transformer<f64>, src: &[usize]) -> Vec<f64> {
    let mut g = Graph::inference();
    let mask = vec![true; src.len()];
    let out = m.encode(&mut g, src, &mask, 1, src.len()).unwrap();
    g.value(out.attention[0]).data().to_vec()
}

/// Brute-force layer-0 self-attention logits, one (head, i, j) at a time.
pub fn oracle_logits(m: &Transformer<f64>, src: &[usize]) -> Vec<f64> {
    let c = m.config();
    let (d, h, dk, s) = (c.d_model, c.heads, c.head_dim(), src.len());
    let p = |name: &str| m.params().get(m.params().id(name).unwrap()).data().to_vec();
    let emb = p("encoder.embedding");
    let x: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let pe = sinusoidal_encoding(i, d);
            (0..d)
                .map(|k| {
                    let e = emb[src[i] * d + k] * (d as f64).sqrt();
                    if c.encoding.is_relative() { e } else { e + pe[k] }
                })
                .collect()
        })
        .collect();
    let layer = if c.share_layers { "encoder.shared" } else { "encoder.layer0" };
    let project = |which: &str| -> Vec<Vec<f64>> {
        let w = p(&format!("{layer}.self_attention.{which}.kernel"));
        let b = p(&format!("{layer}.self_attention.{which}.bias"));
        x.iter()
            .map(|row| (0..d).map(|o| b[o] + (0..d).map(|k| row[k] * w[k * d + o]).sum::<f64>()).collect())
            .collect()
    };
    let (q, k) = (project("query"), project("key"));
    let rel_e = m.params().id(&format!("{layer}.self_attention.rel_embedding")).map(|id| m.params().get(id).data().to_vec());
    let rel_b = m.params().id(&format!("{layer}.self_attention.rel_bias")).map(|id| m.params().get(id).data().to_vec());
    let labels = c.num_labels();
    let mut out = Vec::new();
    for head in 0..h {
        for i in 0..s {
            for j in 0..s {
                let l = relative_label(i, j, c.radius);
                let mut dot = 0.0;
                for t in 0..dk {
                    let mut key = k[j][head * dk + t];
                    if let Some(e) = &rel_e {
                        key += e[l * dk + t];
                    }
                    dot += q[i][head * dk + t] * key;
                }
                let mut logit = dot / (dk as f64).sqrt();
                if let Some(b) = &rel_b {
                    logit += b[head * labels + l];
                }
                out.push(logit);
            }
        }
    }
    out
}

pub fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    logits
        .chunks(width)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(move |v| (v - m).exp() / z).collect::<Vec<_>>()
        })
        .collect()
}

/// Log-ratio of attention weights recovers logit differences.
pub fn log_ratio(att: &[f64], s: usize, head: usize, i: usize, j1: usize, j2: usize) -> f64 {
    let base = head * s * s + i * s;
    (att[base + j1] / att[base + j2]).ln()
}

/// Encoder attention equals softmax of per-pair brute-force logits.
pub fn attention_matches_oracle(enc: Encoding, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Transformer::<f64>::new(toy(enc), toy_vocab(), None, seed).unwrap();
    let src = random_source(&mut rng, 2, 12);
    let got = encoder_attention(&m, &src);
    let want = softmax_rows(&oracle_logits(&m, &src), src.len());
    for (a, b) in got.iter().zip(&want) {
        if (a - b).abs() >= 1e-6 {
            return Err(format!("{enc} seed {seed} src {src:?}: {a} vs {b}"));
        }
    }
    Ok(())
}

/// Repeated-token input: logit differences depend only on offsets.
pub fn translation_invariant(enc: Encoding, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Transformer::<f64>::new(toy(enc), toy_vocab(), None, seed).unwrap();
    let s = rng.gen_range(5..=14);
    let tok = rng.gen_range(3..8);
    let att = encoder_attention(&m, &vec![tok; s]);
    for head in 0..m.config().heads {
        for i in 0..s - 1 {
            for j in 0..s - 1 {
                let a = log_ratio(&att, s, head, i, j, i);
                let b = log_ratio(&att, s, head, i + 1, j + 1, i + 1);
                if (a - b).abs() >= 1e-9 {
                    return Err(format!("{enc} seed {seed} head {head} ({i},{j}): {a} vs {b}"));
                }
            }
        }
    }
    Ok(())
}

/// Offsets beyond `radius` collapse onto the boundary label; offsets inside
/// do not.
pub fn clipping_at_radius(enc: Encoding, radius: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = radius + rng.gen_range(3..=radius + 2);
    let c = ModelConfig { radius, max_len: s + 1, ..toy(enc) };
    let m = Transformer::<f64>::new(c, toy_vocab(), None, seed).unwrap();
    let att = encoder_attention(&m, &vec![rng.gen_range(3..8); s]);
    let first = &att[..s];
    let last = &att[(s - 1) * s..s * s];
    let edge = s - 1 - radius;
    for j in radius + 1..s {
        if (first[j] - first[radius]).abs() >= 1e-12 {
            return Err(format!("{enc} r={radius}: offset +{j} differs from +{radius}"));
        }
    }
    for j in 0..edge {
        if (last[j] - last[edge]).abs() >= 1e-12 {
            return Err(format!("{enc} r={radius}: offset -{} differs from -{radius}", s - 1 - j));
        }
    }
    if (first[radius - 1] - first[radius]).abs() <= 1e-9 || (last[edge + 1] - last[edge]).abs() <= 1e-9 {
        return Err(format!("{enc} r={radius}: in-radius offsets collapsed"));
    }
    Ok(())
}

pub fn copy_config() -> ModelConfig {
    ModelConfig { copy_decoder: true, ..toy(Encoding::Rel2Eb) }
}

/// Random batch of 1..=4 rows over the toy vocabulary.
pub fn random_batch(rng: &mut ChaCha8Rng) -> Seq2SeqBatch {
    let rows = rng.gen_range(1..=4);
    let pairs: Vec<(Vec<usize>, Vec<usize>)> =
        (0..rows).map(|_| (random_source(rng, 1, 6), random_source(rng, 1, 6))).collect();
    let refs: Vec<(&[usize], &[usize])> = pairs.iter().map(|(s, t)| (&s[..], &t[..])).collect();
    Seq2SeqBatch::new(&refs)
}

/// Mixed output sums to 1, copy mass lands only on source tokens, and the
/// gate stays inside (0, 1).
pub fn copy_mixture_is_distribution(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Transformer::<f64>::new(copy_config(), toy_vocab(), None, seed).unwrap();
    let batch = random_batch(&mut rng);
    let mut g = Graph::inference();
    let enc = m.encode(&mut g, &batch.src, &batch.src_mask, batch.size, batch.src_len).unwrap();
    let dec = m
        .decode(&mut g, enc.hidden, &batch.src, &batch.src_mask, batch.src_len, &batch.tgt_in, &batch.tgt_mask, batch.tgt_len)
        .unwrap();
    let copy = dec.copy.unwrap();
    let mixed = g.value(copy.mixed);
    let p2 = g.value(copy.p2);
    for r in 0..mixed.rows() {
        for (what, row) in [("mixed", mixed.row(r)), ("p2", p2.row(r))] {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-9 {
                return Err(format!("seed {seed} row {r}: {what} sums to {sum}"));
            }
        }
        let b = r / batch.tgt_len;
        let present: Vec<usize> = (0..batch.src_len)
            .filter(|&j| batch.src_mask[b * batch.src_len + j])
            .map(|j| batch.src[b * batch.src_len + j])
            .collect();
        for (tok, &p) in p2.row(r).iter().enumerate() {
            if !present.contains(&tok) && p != 0.0 {
                return Err(format!("seed {seed} row {r}: absent token {tok} got copy mass {p}"));
            }
        }
    }
    if let Some(w) = g.value(copy.gate).data().iter().find(|&&w| !(w > 0.0 && w < 1.0)) {
        return Err(format!("seed {seed}: gate {w} outside (0, 1)"));
    }
    Ok(())
}

/// `mix(p1, p2, w)` with w fixed at 1 or 0 returns p1 or p2 bit for bit.
pub fn mixture_endpoints_exact(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, v) = (rng.gen_range(1..6), rng.gen_range(2..9));
    let mut dist = || {
        let raw: Vec<f64> = (0..rows * v).map(|_| rng.gen_range(0.01..1.0)).collect();
        let mut out = raw.clone();
        for r in 0..rows {
            let z: f64 = raw[r * v..(r + 1) * v].iter().sum();
            out[r * v..(r + 1) * v].iter_mut().for_each(|x| *x /= z);
        }
        Tensor::new(vec![rows, v], out).unwrap()
    };
    let (a, b) = (dist(), dist());
    for (w, want) in [(1.0, &a), (0.0, &b)] {
        for wshape in [vec![rows, 1], vec![1]] {
            let n: usize = wshape.iter().product();
            let mut g = Graph::<f64>::inference();
            let p1 = g.constant(a.clone());
            let p2 = g.constant(b.clone());
            let wv = g.constant(Tensor::new(wshape, vec![w; n]).unwrap());
            let mixed = g.mix(p1, p2, wv).unwrap();
            if g.value(mixed).data() != want.data() {
                return Err(format!("seed {seed}: w = {w} with {n} weights is not exact"));
            }
        }
    }
    Ok(())
}

/// Shared-layer parameter counts do not depend on depth.
pub fn shared_counts_depth_independent(vocab: &Vocabulary, base: &ModelConfig) -> Check {
    let counts: Vec<usize> = [2, 4, 6]
        .iter()
        .map(|&l| {
            let c = ModelConfig { layers: l, share_layers: true, ..base.clone() };
            Transformer::<f32>::new(c, vocab.clone(), None, 0).unwrap().parameter_count()
        })
        .collect();
    if counts.windows(2).all(|w| w[0] == w[1]) {
        Ok(())
    } else {
        Err(format!("{} copy={}: {counts:?}", base.encoding, base.copy_decoder))
    }
}

/// Gradient of a shared model equals the sum over layers of the gradients
/// of an unshared model holding the same values in every layer.
pub fn shared_gradient_is_layer_sum(enc: Encoding, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.gen_range(2..=4);
    let shared_cfg = ModelConfig { share_layers: true, layers, copy_decoder: true, ..toy(enc) };
    let shared = Transformer::<f64>::new(shared_cfg.clone(), toy_vocab(), None, seed).unwrap();
    let mut unshared =
        Transformer::<f64>::new(ModelConfig { share_layers: false, ..shared_cfg }, toy_vocab(), None, seed + 1).unwrap();
    let names: Vec<String> = unshared.params().iter().map(|(_, n, _)| n.to_string()).collect();
    let shared_name = |n: &str| -> String {
        ["encoder", "decoder"].iter().fold(n.to_string(), |acc, side| {
            (0..layers).fold(acc, |acc, i| acc.replace(&format!("{side}.layer{i}."), &format!("{side}.shared.")))
        })
    };
    for n in &names {
        let src = shared.params().get(shared.params().id(&shared_name(n)).unwrap()).clone();
        let id = unshared.params().id(n).unwrap();
        *unshared.params_mut().get_mut(id) = src;
    }
    let batch = random_batch(&mut rng);
    let grads = |m: &Transformer<f64>| -> Vec<(String, Vec<f64>)> {
        let mut g = Graph::new();
        let l = m.seq2seq_loss(&mut g, &batch).unwrap();
        g.backward(l).unwrap();
        g.param_grads()
            .into_iter()
            .map(|(id, gr)| {
                let n = m.params().name(id).to_string();
                (n, gr.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; m.params().get(id).len()]))
            })
            .collect()
    };
    let gs = grads(&shared);
    let gu = grads(&unshared);
    for (name, g) in &gs {
        let mut sum = vec![0.0; g.len()];
        for (n, u) in &gu {
            if shared_name(n) == *name {
                for (s, x) in sum.iter_mut().zip(u) {
                    *s += x;
                }
            }
        }
        for (a, b) in g.iter().zip(&sum) {
            if (a - b).abs() > 1e-10 * (1.0 + b.abs()) {
                return Err(format!("{enc} seed {seed} {name}: {a} vs {b}"));
            }
        }
    }
    Ok(())
}
