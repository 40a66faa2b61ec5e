use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tasks;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Add,
    AddNeg,
    Reverse,
    Dup,
    Cart,
    Inters,
    /// Reverse and duplicate mixed, selected by a leading operation token.
    RevDup,
}

impl Task {
    pub const ALL: [Task; 7] = [Task::Add, Task::AddNeg, Task::Reverse, Task::Dup, Task::Cart, Task::Inters, Task::RevDup];

    pub fn name(self) -> &'static str {
        match self {
            Task::Add => "add",
            Task::AddNeg => "addneg",
            Task::Reverse => "reverse",
            Task::Dup => "dup",
            Task::Cart => "cart",
            Task::Inters => "inters",
            Task::RevDup => "revdup",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown task {s:?}")))
    }
}

/// Inclusive length range, serialized as `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct LenRange {
    pub min: usize,
    pub max: usize,
}

impl LenRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }

    pub fn overlaps(&self, other: &LenRange) -> bool {
        self.min <= other.max && other.min <= self.max
    }
}

impl From<[usize; 2]> for LenRange {
    fn from([min, max]: [usize; 2]) -> Self {
        Self { min, max }
    }
}

impl From<LenRange> for [usize; 2] {
    fn from(r: LenRange) -> Self {
        [r.min, r.max]
    }
}

impl fmt::Display for LenRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.min, self.max)
    }
}

/// How test examples relate to training ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Test lengths come from `test_len`, disjoint from `train_len`.
    Length,
    /// Test examples share `train_len` but never repeat a training example.
    Iid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Full recipe for a generated dataset.
///
/// The governing length is the operand digit count for add/addneg, the
/// sequence length for reverse/dup/revdup, and each side's length for
/// cart/inters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub train_size: usize,
    pub test_size: usize,
    pub train_len: LenRange,
    pub test_len: LenRange,
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    /// Operand width after left-padding (add/addneg).
    #[serde(default = "default_pad_width")]
    pub pad_width: usize,
    /// Also left-pad add/addneg targets to `pad_width + 1` tokens.
    #[serde(default)]
    pub pad_target: bool,
    /// Alphabet size for reverse/dup/revdup.
    #[serde(default = "default_symbols")]
    pub symbols: usize,
}

fn default_split() -> SplitMode {
    SplitMode::Length
}

fn default_pad_width() -> usize {
    12
}

fn default_symbols() -> usize {
    10
}

impl DatasetSpec {
    /// Full-scale defaults of a task.
    pub fn defaults(task: Task) -> Self {
        let (train, test) = match task {
            Task::Add | Task::AddNeg => ((1, 8), (9, 10)),
            Task::Reverse | Task::Dup | Task::RevDup => ((1, 16), (17, 24)),
            Task::Cart => ((1, 6), (7, 8)),
            Task::Inters => ((1, 16), (17, 24)),
        };
        Self {
            task,
            train_size: 200_000,
            test_size: 1024,
            train_len: LenRange::new(train.0, train.1),
            test_len: LenRange::new(test.0, test.1),
            seed: 0,
            split: SplitMode::Length,
            pad_width: default_pad_width(),
            pad_target: false,
            symbols: default_symbols(),
        }
    }

    /// Length range governing `split`.
    pub fn range(&self, split: Split) -> LenRange {
        match (split, self.split) {
            (Split::Train, _) | (Split::Test, SplitMode::Iid) => self.train_len,
            (Split::Test, SplitMode::Length) => self.test_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(m));
        for (name, r) in [("train_len", self.train_len), ("test_len", self.test_len)] {
            if r.min == 0 || r.min > r.max {
                return bad(format!("{name} {r} must satisfy 1 <= min <= max"));
            }
        }
        if self.split == SplitMode::Length && self.train_len.overlaps(&self.test_len) {
            return bad(format!("train lengths {} overlap test lengths {}", self.train_len, self.test_len));
        }
        let longest = self.train_len.max.max(self.test_len.max);
        match self.task {
            Task::Add if longest > self.pad_width => {
                return bad(format!("{longest}-digit operands exceed pad width {}", self.pad_width));
            }
            // the sign shares the padded field with the digits
            Task::AddNeg if longest >= self.pad_width => {
                return bad(format!("signed {longest}-digit operands exceed pad width {}", self.pad_width));
            }
            Task::Add | Task::AddNeg if self.pad_width > 17 => {
                return bad("pad width above 17 is unsupported".into());
            }
            Task::Inters if 2 * longest > tasks::INTERS_SYMBOLS => {
                return bad(format!("sets of {longest} do not fit a {}-symbol alphabet", tasks::INTERS_SYMBOLS));
            }
            Task::Reverse | Task::Dup | Task::RevDup if !(2..=1000).contains(&self.symbols) => {
                return bad(format!("alphabet size {} outside 2..=1000", self.symbols));
            }
            _ => {}
        }
        Ok(())
    }
}
