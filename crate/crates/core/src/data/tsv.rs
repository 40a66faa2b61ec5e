//! Tab-separated corpora. Seq2seq lines are `source<TAB>target`; tagging
//! lines are `source<TAB>parents<TAB>role<TAB>category<TAB>noun_det<TAB>verb_name`
//! with one tag per source token. Tokens are space-separated, parents are
//! 0-based token indices or `-1` for none. Empty lines are skipped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use super::spec::DatasetSpec;
use super::tasks::{task_vocabulary, Splits};
use super::{check_token, Example, TaggedExample};
use crate::error::{Error, Result};

fn tokens(field: &str) -> Vec<String> {
    field.split(' ').filter(|t| !t.is_empty()).map(String::from).collect()
}

fn parse_lines<T>(
    text: &str,
    origin: &str,
    mut parse: impl FnMut(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(line).map_err(|msg| Error::Parse { path: origin.to_string(), line: i + 1, msg })?);
    }
    Ok(out)
}

fn check_all(toks: &[String]) -> std::result::Result<(), String> {
    toks.iter().try_for_each(|t| check_token(t))
}

/// Parses seq2seq TSV text; `origin` labels errors.
pub fn parse_tsv_seq2seq(text: &str, origin: &str) -> Result<Vec<Example>> {
    parse_lines(text, origin, |line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(format!("expected 2 tab-separated fields, found {}", fields.len()));
        }
        let (src, tgt) = (tokens(fields[0]), tokens(fields[1]));
        if src.is_empty() {
            return Err("empty source".into());
        }
        check_all(&src)?;
        check_all(&tgt)?;
        Ok(Example { src, tgt })
    })
}

/// Parses tagging TSV text; `origin` labels errors.
pub fn parse_tsv_tagging(text: &str, origin: &str) -> Result<Vec<TaggedExample>> {
    parse_lines(text, origin, |line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(format!("expected 6 tab-separated fields, found {}", fields.len()));
        }
        let src = tokens(fields[0]);
        if src.is_empty() {
            return Err("empty source".into());
        }
        check_all(&src)?;
        let n = src.len();
        let columns: Vec<Vec<String>> = fields[1..].iter().map(|f| tokens(f)).collect();
        for (k, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(format!("tag column {} has {} entries for {n} tokens", k + 1, c.len()));
            }
        }
        let parents = columns[0]
            .iter()
            .map(|p| match p.parse::<i64>() {
                Ok(-1) => Ok(None),
                Ok(v) if v >= 0 && (v as usize) < n => Ok(Some(v as usize)),
                _ => Err(format!("bad parent index {p:?}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let labels: [Vec<String>; 4] = std::array::from_fn(|k| columns[k + 1].clone());
        Ok(TaggedExample { src, parents, labels })
    })
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

pub fn load_tsv_seq2seq(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    parse_tsv_seq2seq(&read(path)?, &path.display().to_string())
}

pub fn load_tsv_tagging(path: impl AsRef<Path>) -> Result<Vec<TaggedExample>> {
    let path = path.as_ref();
    parse_tsv_tagging(&read(path)?, &path.display().to_string())
}

pub fn write_tsv_seq2seq(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        writeln!(w, "{}\t{}", e.src.join(" "), e.tgt.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tsv_tagging(path: impl AsRef<Path>, examples: &[TaggedExample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        let parents: Vec<String> = e
            .parents
            .iter()
            .map(|p| p.map_or("-1".to_string(), |v| v.to_string()))
            .collect();
        write!(w, "{}\t{}", e.src.join(" "), parents.join(" "))?;
        for col in &e.labels {
            write!(w, "\t{}", col.join(" "))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<task>.train.tsv`, `<task>.test.tsv` and a `<task>.json` sidecar
/// holding the spec and the task vocabulary.
pub fn write_splits(dir: impl AsRef<Path>, spec: &DatasetSpec, splits: &Splits) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let task = spec.task.name();
    write_tsv_seq2seq(dir.join(format!("{task}.train.tsv")), &splits.train)?;
    write_tsv_seq2seq(dir.join(format!("{task}.test.tsv")), &splits.test)?;
    let sidecar = json!({
        "spec": spec,
        "seed": spec.seed,
        "train_examples": splits.train.len(),
        "test_examples": splits.test.len(),
        "vocabulary": task_vocabulary(spec),
    });
    fs::write(dir.join(format!("{task}.json")), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
