//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod oracles;
pub mod props;

use compgen::model::{ModelConfig, Seq2SeqBatch, Transformer, Vocabulary};
use compgen::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

/// Central differences of `f` at `x`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradients whose norm is below this are treated as exactly zero; central
/// differences in f64 carry roundoff around 1e-12.
pub const ZERO_FLOOR: f64 = 1e-8;

/// `‖a − b‖ / max(‖a‖, ‖b‖, ZERO_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(ZERO_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Checks the gradient of `sum(build(inputs) ⊙ R)` for a fixed random `R`
/// against central differences. Returns the worst per-input relative error.
pub fn check_primitive(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var, seed: u64) -> f64 {
    let forward = |vals: &[Tensor<f64>], g: &mut Graph<f64>, track: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let out = build(g, &vars);
        let shape = g.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_tensor(&mut rng, &shape, -1.0, 1.0);
        let r = g.constant(r);
        let prod = g.mul(out, r).unwrap();
        (g.sum(prod), vars)
    };
    let mut g = Graph::new();
    let (loss, vars) = forward(inputs, &mut g, true);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let numeric = central_differences(
            |x| {
                let mut vals = inputs.to_vec();
                vals[i] = Tensor::new(inputs[i].shape().to_vec(), x.to_vec()).unwrap();
                let mut g = Graph::new();
                let (l, _) = forward(&vals, &mut g, false);
                g.value(l).data()[0]
            },
            inputs[i].data(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn toy_vocab() -> Vocabulary {
    Vocabulary::new(["a", "b", "c", "d", "e"])
}

pub fn toy_batch() -> Seq2SeqBatch {
    Seq2SeqBatch::new(&[
        (&[3, 4, 5, 3], &[5, 4, 3]),
        (&[6, 7], &[7, 6, 7, 6]),
        (&[4, 3, 6], &[6]),
    ])
}

/// Outcome of a whole-model gradient check.
#[derive(Debug)]
pub struct EndToEnd {
    /// Worst relative error over parameters and the parameter it occurred in.
    pub worst: f64,
    pub worst_param: String,
    /// Scalars whose `h = 1e-4` probe straddled a ReLU kink and were
    /// re-probed with smaller steps.
    pub reprobed: usize,
    pub scalars: usize,
}

/// Gradient check of the full seq2seq loss over every parameter scalar.
///
/// ReLU makes the loss piecewise smooth, so a `±h` probe occasionally crosses
/// a kink. A coordinate that disagrees at `h` is re-probed at `h/10` and
/// `h/100`; a real gradient bug disagrees at every step, a kink does not.
pub fn end_to_end_check(config: ModelConfig, seed: u64) -> EndToEnd {
    let model = Transformer::<f64>::new(config, toy_vocab(), None, seed).unwrap();
    let batch = toy_batch();
    let mut g = Graph::new();
    let loss = model.seq2seq_loss(&mut g, &batch).unwrap();
    g.backward(loss).unwrap();
    let grads: Vec<(compgen::tensor::ParamId, Option<Vec<f64>>)> =
        g.param_grads().into_iter().map(|(id, gr)| (id, gr.map(|s| s.to_vec()))).collect();
    let mut out = EndToEnd { worst: 0.0, worst_param: String::new(), reprobed: 0, scalars: 0 };
    for (id, analytic) in grads {
        let base = model.params().get(id).clone();
        let analytic = analytic.unwrap_or_else(|| vec![0.0; base.len()]);
        let loss_at = |x: &[f64]| {
            let mut m = model.clone();
            *m.params_mut().get_mut(id) = Tensor::new(base.shape().to_vec(), x.to_vec()).unwrap();
            let mut g = Graph::inference();
            let l = m.seq2seq_loss(&mut g, &batch).unwrap();
            g.value(l).data()[0]
        };
        let mut numeric = central_differences(loss_at, base.data(), FD_STEP);
        let scale = norm(&analytic).max(norm(&numeric)).max(ZERO_FLOOR);
        for i in 0..numeric.len() {
            if (numeric[i] - analytic[i]).abs() <= 1e-4 * scale {
                continue;
            }
            for h in [FD_STEP / 10.0, FD_STEP / 100.0] {
                let mut probe = base.data().to_vec();
                probe[i] += h;
                let up = loss_at(&probe);
                probe[i] -= 2.0 * h;
                let down = loss_at(&probe);
                let d = (up - down) / (2.0 * h);
                if (d - analytic[i]).abs() <= 1e-4 * scale {
                    numeric[i] = d;
                    out.reprobed += 1;
                    break;
                }
            }
        }
        out.scalars += numeric.len();
        let err = relative_error(&analytic, &numeric);
        if err > out.worst {
            out.worst = err;
            out.worst_param = model.params().name(id).to_string();
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Every differentiable primitive checked on `cases` random small shapes.
/// Returns the worst relative error per primitive.
pub fn primitive_suite(cases: usize) -> Vec<(&'static str, f64)> {
    type Case = Box<dyn Fn(&mut ChaCha8Rng, u64) -> f64>;
    let suite: Vec<(&'static str, Case)> = vec![
        ("matmul", Box::new(|rng, s| {
            let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
            let a = random_tensor(rng, &[m, k], -1.0, 1.0);
            let b = random_tensor(rng, &[k, n], -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.matmul(v[0], v[1], false).unwrap(), s)
        })),
        ("matmul_batched_transposed", Box::new(|rng, s| {
            let (bt, m, k, n) = (dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
            let a = random_tensor(rng, &[bt, m, k], -1.0, 1.0);
            let b = random_tensor(rng, &[bt, n, k], -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.matmul(v[0], v[1], true).unwrap(), s)
        })),
        ("matmul_shared_rhs", Box::new(|rng, s| {
            let (bt, m, k, n) = (dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
            let a = random_tensor(rng, &[bt, m, k], -1.0, 1.0);
            let b = random_tensor(rng, &[n, k], -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.matmul(v[0], v[1], true).unwrap(), s)
        })),
        ("add", Box::new(|rng, s| {
            let sh = [dims(rng, 1, 4), dims(rng, 1, 4)];
            let a = random_tensor(rng, &sh, -1.0, 1.0);
            let b = random_tensor(rng, &sh, -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.add(v[0], v[1]).unwrap(), s)
        })),
        ("add_bias", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 5), dims(rng, 1, 5));
            let a = random_tensor(rng, &[r, c], -1.0, 1.0);
            let b = random_tensor(rng, &[c], -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.add_bias(v[0], v[1]).unwrap(), s)
        })),
        ("mul", Box::new(|rng, s| {
            let sh = [dims(rng, 1, 4), dims(rng, 1, 4)];
            let a = random_tensor(rng, &sh, -1.0, 1.0);
            let b = random_tensor(rng, &sh, -1.0, 1.0);
            check_primitive(&[a, b], |g, v| g.mul(v[0], v[1]).unwrap(), s)
        })),
        ("scale", Box::new(|rng, s| {
            let n = dims(rng, 1, 6);
            let a = random_tensor(rng, &[n], -1.0, 1.0);
            let f = rng.gen_range(-2.0..2.0);
            check_primitive(&[a], move |g, v| g.scale(v[0], f), s)
        })),
        ("relu", Box::new(|rng, s| {
            // keep inputs away from the kink at 0
            let n = dims(rng, 1, 8);
            let a = Tensor::from_fn(vec![n], |_| {
                let m: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) { m } else { -m }
            });
            check_primitive(&[a], |g, v| g.relu(v[0]), s)
        })),
        ("sigmoid", Box::new(|rng, s| {
            let n = dims(rng, 1, 8);
            let a = random_tensor(rng, &[n], -3.0, 3.0);
            check_primitive(&[a], |g, v| g.sigmoid(v[0]), s)
        })),
        ("sum", Box::new(|rng, s| {
            let sh = [dims(rng, 1, 4), dims(rng, 1, 4)];
            let a = random_tensor(rng, &sh, -1.0, 1.0);
            check_primitive(&[a], |g, v| g.sum(v[0]), s)
        })),
        ("reshape", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 1, 4));
            let a = random_tensor(rng, &[r, c], -1.0, 1.0);
            check_primitive(&[a], move |g, v| g.reshape(v[0], vec![c, r]).unwrap(), s)
        })),
        ("swap_axes12", Box::new(|rng, s| {
            let sh = [dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
            let a = random_tensor(rng, &sh, -1.0, 1.0);
            check_primitive(&[a], |g, v| g.swap_axes12(v[0]).unwrap(), s)
        })),
        ("layer_norm", Box::new(|rng, s| {
            let (r, d) = (dims(rng, 1, 4), dims(rng, 2, 6));
            let x = random_tensor(rng, &[r, d], -2.0, 2.0);
            let gain = random_tensor(rng, &[d], 0.5, 1.5);
            let bias = random_tensor(rng, &[d], -0.5, 0.5);
            check_primitive(&[x, gain, bias], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-6).unwrap(), s)
        })),
        ("softmax_masked", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 1, 6));
            let x = random_tensor(rng, &[r, c], -2.0, 2.0);
            let mask: Vec<bool> = (0..r * c).map(|i| i % c == 0 || rng.gen_bool(0.7)).collect();
            check_primitive(&[x], move |g, v| g.softmax(v[0], Some(&mask)).unwrap(), s)
        })),
        ("embedding", Box::new(|rng, s| {
            let (rows, d) = (dims(rng, 2, 6), dims(rng, 1, 4));
            let t = random_tensor(rng, &[rows, d], -1.0, 1.0);
            let ids: Vec<usize> = (0..dims(rng, 1, 8)).map(|_| rng.gen_range(0..rows)).collect();
            check_primitive(&[t], move |g, v| g.embedding(v[0], &ids).unwrap(), s)
        })),
        ("rel_gather", Box::new(|rng, s| {
            let (n, t, k, r) = (dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 3));
            let x = random_tensor(rng, &[n, t, 2 * r + 1], -1.0, 1.0);
            let labels = compgen::model::label_matrix(t, k, r);
            check_primitive(&[x], move |g, v| g.rel_gather(v[0], &labels, t, k).unwrap(), s)
        })),
        ("rel_bias", Box::new(|rng, s| {
            let (b, h, t, k, r) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 3));
            let x = random_tensor(rng, &[b, h, t, k], -1.0, 1.0);
            let table = random_tensor(rng, &[h, 2 * r + 1], -1.0, 1.0);
            let labels = compgen::model::label_matrix(t, k, r);
            check_primitive(&[x, table], move |g, v| g.rel_bias(v[0], v[1], &labels, t, k).unwrap(), s)
        })),
        ("cross_entropy_logits", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 5), dims(rng, 2, 6));
            let x = random_tensor(rng, &[r, c], -2.0, 2.0);
            let targets: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let mask: Vec<bool> = (0..r).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
            check_primitive(&[x], move |g, v| g.cross_entropy_logits(v[0], &targets, &mask).unwrap(), s)
        })),
        ("nll_probs", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 5), dims(rng, 2, 6));
            let x = random_tensor(rng, &[r, c], -2.0, 2.0);
            let targets: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let mask: Vec<bool> = (0..r).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
            check_primitive(&[x], move |g, v| {
                let p = g.softmax(v[0], None).unwrap();
                g.nll_probs(p, &targets, &mask, 1e-9).unwrap()
            }, s)
        })),
        ("copy_scatter", Box::new(|rng, s| {
            let (b, t, k, vocab) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 2, 6));
            let a = random_tensor(rng, &[b, t, k], 0.0, 1.0);
            let src: Vec<usize> = (0..b * k).map(|_| rng.gen_range(0..vocab)).collect();
            check_primitive(&[a], move |g, v| g.copy_scatter(v[0], &src, vocab).unwrap(), s)
        })),
        ("mix", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 2, 5));
            let p1 = random_tensor(rng, &[r, c], 0.0, 1.0);
            let p2 = random_tensor(rng, &[r, c], 0.0, 1.0);
            let w = random_tensor(rng, &[r], 0.0, 1.0);
            check_primitive(&[p1, p2, w], |g, v| g.mix(v[0], v[1], v[2]).unwrap(), s)
        })),
        ("mix_global_weight", Box::new(|rng, s| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 2, 5));
            let p1 = random_tensor(rng, &[r, c], 0.0, 1.0);
            let p2 = random_tensor(rng, &[r, c], 0.0, 1.0);
            let w = random_tensor(rng, &[1], 0.0, 1.0);
            check_primitive(&[p1, p2, w], |g, v| g.mix(v[0], v[1], v[2]).unwrap(), s)
        })),
        ("append_col", Box::new(|rng, s| {
            let sh = [dims(rng, 1, 3), dims(rng, 1, 4)];
            let x = random_tensor(rng, &sh, -1.0, 1.0);
            let v = random_tensor(rng, &[1], -1.0, 1.0);
            check_primitive(&[x, v], |g, vars| g.append_col(vars[0], vars[1]).unwrap(), s)
        })),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    suite
        .into_iter()
        .map(|(name, case)| {
            let worst = (0..cases)
                .map(|i| case(&mut rng, 1000 + i as u64))
                .fold(0.0f64, f64::max);
            (name, worst)
        })
        .collect()
}
