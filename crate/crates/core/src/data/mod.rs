//! Algorithmic datasets with length splits, and TSV ingestion.

mod spec;
mod tasks;
mod tsv;

pub use spec::{DatasetSpec, LenRange, Split, SplitMode, Task};
pub use tasks::{
    addition_example, cartesian_example, duplicate_example, generate, generate_split, intersection_example,
    reverse_example, task_vocabulary, Splits, FALSE, PAD_DIGIT, SEPARATOR, TRUE,
};
pub use tsv::{
    load_tsv_seq2seq, load_tsv_tagging, parse_tsv_seq2seq, parse_tsv_tagging, write_splits, write_tsv_seq2seq,
    write_tsv_tagging,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelSet, TagLabels, TaggedIds, Vocabulary, SPECIALS};

/// One source/target pair of raw tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl Example {
    pub fn new<S: AsRef<str>>(src: &[S], tgt: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|t| t.as_ref().to_string()).collect();
        Self { src: own(src), tgt: own(tgt) }
    }

    /// Space-joined source and target.
    pub fn text(&self) -> (String, String) {
        (self.src.join(" "), self.tgt.join(" "))
    }
}

/// One tagging example: tokens, parent indices and four label columns
/// (role, category, noun determiner, verb name).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedExample {
    pub src: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub labels: [Vec<String>; 4],
}

/// Union vocabulary over sources and targets of `examples`.
pub fn seq2seq_vocabulary<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Vocabulary {
    Vocabulary::new(examples.into_iter().flat_map(|e| e.src.iter().chain(&e.tgt)))
}

/// Source vocabulary and the four label sets of a tagging corpus.
pub fn tagging_vocabulary<'a>(examples: impl IntoIterator<Item = &'a TaggedExample> + Clone) -> (Vocabulary, TagLabels) {
    let vocab = Vocabulary::new(examples.clone().into_iter().flat_map(|e| e.src.iter()));
    let labels = std::array::from_fn(|k| LabelSet::new(examples.clone().into_iter().flat_map(|e| e.labels[k].iter())));
    (vocab, labels)
}

/// Maps a tagging example to ids; unknown tokens or labels are errors.
pub fn tagged_ids(e: &TaggedExample, vocab: &Vocabulary, labels: &TagLabels) -> Result<TaggedIds> {
    let src = vocab.encode(&e.src)?;
    let mut out: [Vec<usize>; 4] = Default::default();
    for k in 0..4 {
        out[k] = e.labels[k]
            .iter()
            .map(|l| labels[k].id(l).ok_or_else(|| Error::UnknownToken(l.clone())))
            .collect::<Result<_>>()?;
    }
    Ok(TaggedIds { src, parents: e.parents.clone(), labels: out })
}

/// Rejects tokens that collide with the reserved specials or contain whitespace.
pub(crate) fn check_token(tok: &str) -> std::result::Result<(), String> {
    if tok.is_empty() {
        return Err("empty token".into());
    }
    if SPECIALS.contains(&tok) {
        return Err(format!("reserved token {tok:?}"));
    }
    if tok.chars().any(char::is_whitespace) {
        return Err(format!("token {tok:?} contains whitespace"));
    }
    Ok(())
}
