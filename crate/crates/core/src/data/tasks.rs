use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{DatasetSpec, Split, SplitMode, Task};
use super::Example;
use crate::error::{Error, Result};
use crate::model::Vocabulary;

/// Left-padding token for addition operands.
pub const PAD_DIGIT: &str = "#";
pub const PLUS: &str = "+";
pub const MINUS: &str = "-";
/// Separates the two halves of cart/inters sources.
pub const SEPARATOR: &str = "|";
pub const TRUE: &str = "true";
pub const FALSE: &str = "false";
pub const OP_REVERSE: &str = "rev";
pub const OP_DUPLICATE: &str = "dup";
pub const INTERS_SYMBOLS: usize = 100;
const CART_SIDE: usize = 10;

/// Generated train and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn digits() -> impl Iterator<Item = String> {
    (0..10).map(|d| d.to_string())
}

fn symbol(i: usize, alphabet: usize) -> String {
    if alphabet <= 10 {
        i.to_string()
    } else {
        format!("s{i}")
    }
}

fn cart_x(i: usize) -> String {
    format!("x{i}")
}

fn cart_y(i: usize) -> String {
    format!("y{i}")
}

fn inters_symbol(i: usize) -> String {
    format!("a{i}")
}

/// Every token a task can emit, independent of sampling luck.
pub fn task_vocabulary(spec: &DatasetSpec) -> Vocabulary {
    let mut toks: Vec<String> = Vec::new();
    match spec.task {
        Task::Add => toks.extend(digits().chain([PLUS.into(), PAD_DIGIT.into()])),
        Task::AddNeg => toks.extend(digits().chain([PLUS.into(), MINUS.into(), PAD_DIGIT.into()])),
        Task::Reverse | Task::Dup => toks.extend((0..spec.symbols).map(|i| symbol(i, spec.symbols))),
        Task::RevDup => {
            toks.extend((0..spec.symbols).map(|i| symbol(i, spec.symbols)));
            toks.extend([OP_REVERSE.into(), OP_DUPLICATE.into()]);
        }
        Task::Cart => {
            toks.extend((0..CART_SIDE).map(cart_x).chain((0..CART_SIDE).map(cart_y)));
            toks.push(SEPARATOR.into());
        }
        Task::Inters => {
            toks.extend((0..INTERS_SYMBOLS).map(inters_symbol));
            toks.extend([SEPARATOR.into(), TRUE.into(), FALSE.into()]);
        }
    }
    Vocabulary::new(toks)
}

fn signed_digits(v: i64) -> Vec<String> {
    let mut out = Vec::new();
    if v < 0 {
        out.push(MINUS.to_string());
    }
    out.extend(v.unsigned_abs().to_string().chars().map(|c| c.to_string()));
    out
}

fn left_pad(mut toks: Vec<String>, width: usize) -> Vec<String> {
    let fill = width.saturating_sub(toks.len());
    let mut out = vec![PAD_DIGIT.to_string(); fill];
    out.append(&mut toks);
    out
}

/// Formats `a + b`: each operand (sign included) is left-padded to `width`
/// tokens and the target holds the digits of the sum, optionally padded to
/// `width + 1`.
pub fn addition_example(a: i64, b: i64, width: usize, pad_target: bool) -> Example {
    let mut src = left_pad(signed_digits(a), width);
    src.push(PLUS.to_string());
    src.extend(left_pad(signed_digits(b), width));
    let mut tgt = signed_digits(a + b);
    if pad_target {
        tgt = left_pad(tgt, width + 1);
    }
    Example { src, tgt }
}

pub fn reverse_example(seq: &[String]) -> Example {
    Example { src: seq.to_vec(), tgt: seq.iter().rev().cloned().collect() }
}

pub fn duplicate_example(seq: &[String]) -> Example {
    Example { src: seq.to_vec(), tgt: seq.iter().chain(seq).cloned().collect() }
}

/// Row-major product: `x_i y_j` for `i` outer, `j` inner.
pub fn cartesian_example(xs: &[String], ys: &[String]) -> Example {
    let mut src = xs.to_vec();
    src.push(SEPARATOR.to_string());
    src.extend_from_slice(ys);
    let mut tgt = Vec::with_capacity(2 * xs.len() * ys.len());
    for x in xs {
        for y in ys {
            tgt.push(x.clone());
            tgt.push(y.clone());
        }
    }
    Example { src, tgt }
}

pub fn intersection_example(a: &[String], b: &[String]) -> Example {
    let mut src = a.to_vec();
    src.push(SEPARATOR.to_string());
    src.extend_from_slice(b);
    let shared = a.iter().any(|x| b.contains(x));
    Example { src, tgt: vec![if shared { TRUE } else { FALSE }.to_string()] }
}

/// Magnitude with exactly `n` digits, no leading zero unless `n == 1`.
fn draw_magnitude(rng: &mut ChaCha8Rng, n: usize, nonzero: bool) -> i64 {
    if n == 1 {
        return rng.gen_range(if nonzero { 1 } else { 0 }..10);
    }
    let mut v: i64 = rng.gen_range(1..10);
    for _ in 1..n {
        v = v * 10 + rng.gen_range(0..10);
    }
    v
}

fn draw_operand(rng: &mut ChaCha8Rng, spec: &DatasetSpec, split: Split) -> i64 {
    let r = spec.range(split);
    let n = rng.gen_range(r.min..=r.max);
    let negative = spec.task == Task::AddNeg && rng.gen_bool(0.25);
    let m = draw_magnitude(rng, n, negative);
    if negative { -m } else { m }
}

fn draw_symbols(rng: &mut ChaCha8Rng, n: usize, alphabet: usize, name: impl Fn(usize) -> String) -> Vec<String> {
    (0..n).map(|_| name(rng.gen_range(0..alphabet))).collect()
}

fn draw_example(rng: &mut ChaCha8Rng, spec: &DatasetSpec, split: Split) -> Example {
    let r = spec.range(split);
    let len = |rng: &mut ChaCha8Rng| rng.gen_range(r.min..=r.max);
    match spec.task {
        Task::Add | Task::AddNeg => {
            let a = draw_operand(rng, spec, split);
            let b = draw_operand(rng, spec, split);
            addition_example(a, b, spec.pad_width, spec.pad_target)
        }
        Task::Reverse | Task::Dup | Task::RevDup => {
            let n = len(rng);
            let k = spec.symbols;
            let seq = draw_symbols(rng, n, k, |i| symbol(i, k));
            match spec.task {
                Task::Reverse => reverse_example(&seq),
                Task::Dup => duplicate_example(&seq),
                _ => {
                    let reverse = rng.gen_bool(0.5);
                    let mut e = if reverse { reverse_example(&seq) } else { duplicate_example(&seq) };
                    e.src.insert(0, if reverse { OP_REVERSE } else { OP_DUPLICATE }.to_string());
                    e
                }
            }
        }
        Task::Cart => {
            let (nx, ny) = (len(rng), len(rng));
            let xs = draw_symbols(rng, nx, CART_SIDE, cart_x);
            let ys = draw_symbols(rng, ny, CART_SIDE, cart_y);
            cartesian_example(&xs, &ys)
        }
        Task::Inters => {
            let (na, nb) = (len(rng), len(rng));
            let want_shared = rng.gen_bool(0.5);
            let mut pool: Vec<usize> = (0..INTERS_SYMBOLS).collect();
            pool.shuffle(rng);
            let a: Vec<usize> = pool[..na].to_vec();
            let b: Vec<usize> = if want_shared {
                // one forced common element, the rest from anywhere
                let common = a[rng.gen_range(0..na)];
                let mut rest: Vec<usize> = (0..INTERS_SYMBOLS).filter(|&s| s != common).collect();
                rest.shuffle(rng);
                let mut b: Vec<usize> = rest[..nb - 1].to_vec();
                b.insert(rng.gen_range(0..nb), common);
                b
            } else {
                pool[na..na + nb].to_vec()
            };
            let name = |v: &[usize]| v.iter().map(|&s| inters_symbol(s)).collect::<Vec<_>>();
            intersection_example(&name(&a), &name(&b))
        }
    }
}

fn split_rng(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    rng
}

/// Draws `size` distinct examples, skipping any in `exclude`.
fn draw_distinct(spec: &DatasetSpec, split: Split, size: usize, exclude: &HashSet<Example>) -> Result<Vec<Example>> {
    let mut rng = split_rng(spec.seed, split);
    let mut seen: HashSet<Example> = HashSet::with_capacity(size);
    let mut out = Vec::with_capacity(size);
    let budget = 50 * size + 1000;
    let mut attempts = 0;
    while out.len() < size {
        if attempts == budget {
            return Err(Error::Data(format!(
                "{} {:?} split: only {} distinct examples after {budget} draws",
                spec.task,
                split,
                out.len()
            )));
        }
        attempts += 1;
        let e = draw_example(&mut rng, spec, split);
        if exclude.contains(&e) || seen.contains(&e) {
            continue;
        }
        seen.insert(e.clone());
        out.push(e);
    }
    Ok(out)
}

/// One split of a dataset. An iid test split regenerates the training split
/// so it can exclude it.
pub fn generate_split(spec: &DatasetSpec, split: Split) -> Result<Vec<Example>> {
    spec.validate()?;
    match (split, spec.split) {
        (Split::Train, _) => draw_distinct(spec, split, spec.train_size, &HashSet::new()),
        (Split::Test, SplitMode::Length) => draw_distinct(spec, split, spec.test_size, &HashSet::new()),
        (Split::Test, SplitMode::Iid) => Ok(generate(spec)?.test),
    }
}

/// Both splits of a dataset; pure in `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let train = draw_distinct(spec, Split::Train, spec.train_size, &HashSet::new())?;
    let test = match spec.split {
        SplitMode::Length => draw_distinct(spec, Split::Test, spec.test_size, &HashSet::new())?,
        SplitMode::Iid => {
            let exclude: HashSet<Example> = train.iter().cloned().collect();
            draw_distinct(spec, Split::Test, spec.test_size, &exclude)?
        }
    };
    Ok(Splits { train, test })
}
