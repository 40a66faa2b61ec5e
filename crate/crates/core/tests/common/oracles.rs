//! Brute-force reference answers for every generated task, written against
//! the raw token text only.

use std::collections::HashSet;

use compgen::data::{DatasetSpec, Example, Split, Task};
use num_bigint::BigInt;

/// Integer value of one padded operand field; `None` if the field is malformed.
fn operand(field: &[String]) -> Option<BigInt> {
    let body: Vec<&str> = field.iter().map(String::as_str).skip_while(|t| *t == "#").collect();
    let (neg, digits) = match body.split_first() {
        Some((&"-", rest)) => (true, rest),
        _ => (false, &body[..]),
    };
    if digits.is_empty() || digits.iter().any(|d| d.len() != 1 || !d.as_bytes()[0].is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits[0] == "0" {
        return None;
    }
    let v: BigInt = digits.concat().parse().ok()?;
    Some(if neg { -v } else { v })
}

fn operands(e: &Example) -> Option<(BigInt, BigInt, usize, usize)> {
    let plus = e.src.iter().position(|t| t == "+")?;
    let (a, b) = (&e.src[..plus], &e.src[plus + 1..]);
    let digits = |f: &[String]| f.iter().filter(|t| t.len() == 1 && t.as_bytes()[0].is_ascii_digit()).count();
    Some((operand(a)?, operand(b)?, digits(a), digits(b)))
}

/// Expected target of an add/addneg example via big-integer arithmetic.
pub fn addition_target(e: &Example) -> Option<Vec<String>> {
    let (a, b, _, _) = operands(e)?;
    let sum = (a + b).to_string();
    let mut out = Vec::new();
    for c in sum.chars() {
        out.push(c.to_string());
    }
    Some(out)
}

/// The sign and digit tokens of a target, ignoring left padding.
pub fn strip_pad(t: &[String]) -> Vec<String> {
    t.iter().skip_while(|x| *x == "#").cloned().collect()
}

fn sides(e: &Example) -> (Vec<String>, Vec<String>) {
    let sep = e.src.iter().position(|t| t == "|").expect("separator");
    (e.src[..sep].to_vec(), e.src[sep + 1..].to_vec())
}

pub fn cartesian_target(e: &Example) -> Vec<String> {
    let (xs, ys) = sides(e);
    let mut out = Vec::new();
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            out.push(xs[i].clone());
            out.push(ys[j].clone());
        }
    }
    out
}

pub fn intersection_target(e: &Example) -> Vec<String> {
    let (a, b) = sides(e);
    let mut shared = false;
    for x in &a {
        for y in &b {
            if x == y {
                shared = true;
            }
        }
    }
    vec![if shared { "true" } else { "false" }.to_string()]
}

/// Governing lengths of an example: operand digit counts, sequence length,
/// or side lengths.
pub fn governing_lengths(task: Task, e: &Example) -> Vec<usize> {
    match task {
        Task::Add | Task::AddNeg => {
            let (_, _, la, lb) = operands(e).expect("operands");
            vec![la, lb]
        }
        Task::Reverse | Task::Dup => vec![e.src.len()],
        Task::RevDup => vec![e.src.len() - 1],
        Task::Cart | Task::Inters => {
            let (a, b) = sides(e);
            vec![a.len(), b.len()]
        }
    }
}

/// Checks one example against the task oracle; `Err` describes the mismatch.
pub fn check_example(spec: &DatasetSpec, e: &Example) -> Result<(), String> {
    let want = match spec.task {
        Task::Add | Task::AddNeg => {
            let w = addition_target(e).ok_or("malformed operands")?;
            if spec.pad_target {
                if e.tgt.len() != spec.pad_width + 1 {
                    return Err(format!("padded target width {}", e.tgt.len()));
                }
                if strip_pad(&e.tgt) != w {
                    return Err(format!("{:?} != {:?}", e.tgt, w));
                }
                return Ok(());
            }
            w
        }
        Task::Reverse => {
            // involution: reversing the target must give back the source
            let back: Vec<String> = e.tgt.iter().rev().cloned().collect();
            if back != e.src {
                return Err("reverse is not an involution".into());
            }
            e.tgt.clone()
        }
        Task::Dup => {
            let mut w = e.src.clone();
            w.extend(e.src.iter().cloned());
            w
        }
        Task::RevDup => {
            let body = &e.src[1..];
            match e.src[0].as_str() {
                "rev" => body.iter().rev().cloned().collect(),
                "dup" => body.iter().chain(body).cloned().collect(),
                op => return Err(format!("unknown op {op}")),
            }
        }
        Task::Cart => cartesian_target(e),
        Task::Inters => intersection_target(e),
    };
    if want != e.tgt {
        return Err(format!("target {:?}, oracle {:?}", e.tgt, want));
    }
    Ok(())
}

/// Every example matches its oracle, lengths lie in the split's range, and
/// no example repeats.
pub fn check_split(spec: &DatasetSpec, split: Split, examples: &[Example]) -> Result<(), String> {
    let range = spec.range(split);
    let mut seen = HashSet::new();
    for (i, e) in examples.iter().enumerate() {
        check_example(spec, e).map_err(|m| format!("{} example {i}: {m}", spec.task))?;
        for n in governing_lengths(spec.task, e) {
            if !range.contains(n) {
                return Err(format!("{} example {i}: length {n} outside {range}", spec.task));
            }
        }
        if !seen.insert(e) {
            return Err(format!("{} example {i} duplicated", spec.task));
        }
    }
    Ok(())
}

/// Fraction of addneg operands carrying a minus sign.
pub fn negative_rate(examples: &[Example]) -> f64 {
    let mut neg = 0usize;
    let mut total = 0usize;
    for e in examples {
        let plus = e.src.iter().position(|t| t == "+").unwrap();
        for field in [&e.src[..plus], &e.src[plus + 1..]] {
            total += 1;
            if field.iter().any(|t| t == "-") {
                neg += 1;
            }
        }
    }
    neg as f64 / total as f64
}

pub fn true_rate(examples: &[Example]) -> f64 {
    examples.iter().filter(|e| e.tgt == ["true"]).count() as f64 / examples.len() as f64
}
