use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position encoding variant.
///
/// `rel-*` variants label encoder self-attention and decoder self-attention
/// pairs by clipped offset; `rel2-*` also label decoder-to-encoder pairs.
/// The `e` suffix adds a learned embedding to each key, `b` a learned
/// per-head bias to each logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    #[serde(rename = "abs")]
    Abs,
    #[serde(rename = "rel-e")]
    RelE,
    #[serde(rename = "rel-b")]
    RelB,
    #[serde(rename = "rel-eb")]
    RelEb,
    #[serde(rename = "rel2-e")]
    Rel2E,
    #[serde(rename = "rel2-b")]
    Rel2B,
    #[serde(rename = "rel2-eb")]
    Rel2Eb,
}

impl Encoding {
    pub const ALL: [Encoding; 7] = [
        Encoding::Abs,
        Encoding::RelE,
        Encoding::RelB,
        Encoding::RelEb,
        Encoding::Rel2E,
        Encoding::Rel2B,
        Encoding::Rel2Eb,
    ];

    pub fn is_relative(self) -> bool {
        self != Encoding::Abs
    }

    pub fn rel_embedding(self) -> bool {
        matches!(self, Encoding::RelE | Encoding::RelEb | Encoding::Rel2E | Encoding::Rel2Eb)
    }

    pub fn rel_bias(self) -> bool {
        matches!(self, Encoding::RelB | Encoding::RelEb | Encoding::Rel2B | Encoding::Rel2Eb)
    }

    /// Whether decoder-to-encoder attention uses relative labels.
    pub fn relative_cross(self) -> bool {
        matches!(self, Encoding::Rel2E | Encoding::Rel2B | Encoding::Rel2Eb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Abs => "abs",
            Encoding::RelE => "rel-e",
            Encoding::RelB => "rel-b",
            Encoding::RelEb => "rel-eb",
            Encoding::Rel2E => "rel2-e",
            Encoding::Rel2B => "rel2-b",
            Encoding::Rel2Eb => "rel2-eb",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Encoding::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoding {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Seq2seq,
    Tagging,
}

/// How the tagging model predicts each token's parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParentHead {
    /// Classifier over absolute positions `0..max_len` plus NONE.
    Absolute,
    /// Classifier over offsets `-max_len..=max_len`; offset 0 (SELF) means no parent.
    Relative,
    /// Raw scores of a dedicated one-head attention layer plus a learned NONE score.
    Attention,
}

/// Parameterization of the copy-decoder mixing weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyGate {
    /// `sigmoid(g·y + b)` per decoding step.
    PerStep,
    /// `sigmoid(b)` with a single learned scalar.
    Global,
}

/// Every architecture knob of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoding: Encoding,
    pub copy_decoder: bool,
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub share_layers: bool,
    pub radius: usize,
    pub mode: Mode,
    pub parent_head: ParentHead,
    pub max_len: usize,
    pub copy_gate: CopyGate,
    /// Apply a second softmax over the vocabulary to the copy distribution.
    pub copy_vocab_softmax: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoding: Encoding::Abs,
            copy_decoder: false,
            layers: 2,
            d_model: 64,
            d_ff: 256,
            heads: 4,
            share_layers: false,
            radius: 16,
            mode: Mode::Seq2seq,
            parent_head: ParentHead::Absolute,
            max_len: 64,
            copy_gate: CopyGate::PerStep,
            copy_vocab_softmax: false,
        }
    }
}

/// Layer dimensions `(d, f, h)` of a size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizePreset {
    Small,
    Large,
}

impl SizePreset {
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            SizePreset::Small => (64, 256, 4),
            SizePreset::Large => (128, 512, 8),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.radius == 0 {
            return bad("radius must be >= 1".into());
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return bad("d_ff and max_len must be positive".into());
        }
        if self.encoding == Encoding::Abs && self.d_model % 2 != 0 {
            return bad("sinusoidal encodings need an even d_model".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Number of relative labels, `2·radius + 1`.
    pub fn num_labels(&self) -> usize {
        2 * self.radius + 1
    }

    /// Longest sequence greedy decoding will produce.
    pub fn decode_cap(&self) -> usize {
        2 * self.max_len + 4
    }

    pub fn with_size(mut self, size: SizePreset, layers: usize, shared: bool) -> Self {
        let (d, f, h) = size.dims();
        self.d_model = d;
        self.d_ff = f;
        self.heads = h;
        self.layers = layers;
        self.share_layers = shared;
        self
    }

    /// Applies a named preset: a size name (`small-2`, `large-4s`, ...) or an
    /// encoding name with an optional copy suffix (`rel2-eb`, `abs-c`, ...).
    pub fn apply_name(mut self, name: &str) -> Result<Self> {
        if let Some((size, rest)) = name.split_once('-') {
            let size = match size {
                "small" => Some(SizePreset::Small),
                "large" => Some(SizePreset::Large),
                _ => None,
            };
            if let Some(size) = size {
                let (digits, shared) = match rest.strip_suffix('s') {
                    Some(d) => (d, true),
                    None => (rest, false),
                };
                let layers: usize = digits
                    .parse()
                    .map_err(|_| Error::Config(format!("bad preset {name:?}")))?;
                return Ok(self.with_size(size, layers, shared));
            }
        }
        let (enc, copy) = match name.strip_suffix("-c") {
            Some(e) => (e, true),
            None => (name, false),
        };
        self.encoding = enc.parse()?;
        self.copy_decoder = copy;
        Ok(self)
    }

    /// Short label such as `rel2-eb-c`.
    pub fn variant_name(&self) -> String {
        format!("{}{}", self.encoding, if self.copy_decoder { "-c" } else { "" })
    }
}
