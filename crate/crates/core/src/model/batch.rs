use super::config::ParentHead;
use super::vocab::{BOS, EOS, PAD};

/// Padded teacher-forcing batch. `tgt_in` is BOS-prefixed and `tgt_out` is
/// EOS-suffixed; masks are true exactly on non-PAD cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqBatch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<usize>,
    pub src_mask: Vec<bool>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub tgt_mask: Vec<bool>,
}

impl Seq2SeqBatch {
    /// Builds a batch from `(source ids, target ids)` pairs without specials.
    pub fn new(pairs: &[(&[usize], &[usize])]) -> Self {
        assert!(!pairs.is_empty(), "empty batch");
        let size = pairs.len();
        let src_len = pairs.iter().map(|(s, _)| s.len()).max().unwrap();
        let tgt_len = pairs.iter().map(|(_, t)| t.len() + 1).max().unwrap();
        let mut b = Self {
            size,
            src_len,
            tgt_len,
            src: vec![PAD; size * src_len],
            src_mask: vec![false; size * src_len],
            tgt_in: vec![PAD; size * tgt_len],
            tgt_out: vec![PAD; size * tgt_len],
            tgt_mask: vec![false; size * tgt_len],
        };
        for (r, (s, t)) in pairs.iter().enumerate() {
            for (j, &id) in s.iter().enumerate() {
                b.src[r * src_len + j] = id;
                b.src_mask[r * src_len + j] = true;
            }
            let row = r * tgt_len;
            b.tgt_in[row] = BOS;
            for (j, &id) in t.iter().enumerate() {
                b.tgt_in[row + j + 1] = id;
                b.tgt_out[row + j] = id;
            }
            b.tgt_out[row + t.len()] = EOS;
            for j in 0..=t.len() {
                b.tgt_mask[row + j] = true;
            }
        }
        b
    }
}

/// Token ids plus per-token tags of one tagging example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedIds {
    pub src: Vec<usize>,
    /// Absolute index of each token's parent.
    pub parents: Vec<Option<usize>>,
    /// Role, category, noun determiner and verb name label ids.
    pub labels: [Vec<usize>; 4],
}

/// Padded tagging batch with class targets for all five heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggingBatch {
    pub size: usize,
    pub len: usize,
    pub src: Vec<usize>,
    pub mask: Vec<bool>,
    /// Parent, role, category, noun determiner, verb name.
    pub targets: [Vec<usize>; 5],
}

/// Parent class index under a given head parameterization.
///
/// Absolute: position, or `max_len` for NONE. Relative: `offset + max_len`,
/// where offset 0 (SELF) stands for NONE. Attention: position, or `width`
/// (the appended NONE column).
pub fn parent_class(head: ParentHead, pos: usize, parent: Option<usize>, width: usize, max_len: usize) -> usize {
    match (head, parent) {
        (ParentHead::Absolute, Some(p)) => p,
        (ParentHead::Absolute, None) => max_len,
        (ParentHead::Relative, Some(p)) => (p as i64 - pos as i64 + max_len as i64) as usize,
        (ParentHead::Relative, None) => max_len,
        (ParentHead::Attention, Some(p)) => p,
        (ParentHead::Attention, None) => width,
    }
}

impl TaggingBatch {
    pub fn new(items: &[&TaggedIds], head: ParentHead, max_len: usize) -> Self {
        assert!(!items.is_empty(), "empty batch");
        let size = items.len();
        let len = items.iter().map(|e| e.src.len()).max().unwrap();
        let mut b = Self {
            size,
            len,
            src: vec![PAD; size * len],
            mask: vec![false; size * len],
            targets: std::array::from_fn(|_| vec![0; size * len]),
        };
        for (r, e) in items.iter().enumerate() {
            for (j, &id) in e.src.iter().enumerate() {
                let cell = r * len + j;
                b.src[cell] = id;
                b.mask[cell] = true;
                b.targets[0][cell] = parent_class(head, j, e.parents[j], len, max_len);
                for k in 0..4 {
                    b.targets[k + 1][cell] = e.labels[k][j];
                }
            }
        }
        b
    }
}
