use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kv::{KvDocument, KvError};
use crate::nn::{Activation, ModelError};

/// What sits on top of the categorical encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// gMLP stack over the token sequence (GatedTabTransformer).
    Gmlp,
    /// Flatten and MLP (TabTransformer).
    Mlp,
    /// No transformer stack: raw column embeddings and continuous values
    /// straight into an MLP.
    None,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Gmlp => "gmlp",
            HeadKind::Mlp => "mlp",
            HeadKind::None => "none",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmlp" => Ok(HeadKind::Gmlp),
            "mlp" => Ok(HeadKind::Mlp),
            "none" => Ok(HeadKind::None),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown head kind `{other}` (expected gmlp, mlp or none)"
            ))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of transformer layers `N`.
    pub transformer_depth: usize,
    pub heads: usize,
    /// Column embedding width `d`.
    pub embed_dim: usize,
    pub head: HeadKind,
    /// Number of gMLP blocks `L`.
    pub gmlp_depth: usize,
    /// Channel width of the gMLP stack; the token sequence is projected from
    /// `embed_dim` when the two differ.
    pub gmlp_dim: usize,
    /// Channel expansion inside a gMLP block; the expanded width
    /// `gmlp_dim * gmlp_hidden_mult` must be even.
    pub gmlp_hidden_mult: usize,
    /// Hidden widths of the MLP head.
    pub mlp_hidden: Vec<usize>,
    /// Activation of the heads.
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            transformer_depth: 2,
            heads: 4,
            embed_dim: 16,
            head: HeadKind::Gmlp,
            gmlp_depth: 4,
            gmlp_dim: 16,
            gmlp_hidden_mult: 2,
            mlp_hidden: vec![64, 32],
            activation: Activation::Relu,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.uses_transformer() {
            if self.heads == 0 {
                return bad("heads must be positive".into());
            }
            if self.embed_dim % self.heads != 0 {
                return bad(format!(
                    "embed_dim {} is not divisible by heads {}",
                    self.embed_dim, self.heads
                ));
            }
        }
        match self.head {
            HeadKind::Gmlp => {
                if self.gmlp_depth == 0 {
                    return bad("gmlp_depth must be at least 1".into());
                }
                if self.gmlp_dim == 0 || self.gmlp_hidden_mult == 0 {
                    return bad("gmlp_dim and gmlp_hidden_mult must be positive".into());
                }
                if (self.gmlp_dim * self.gmlp_hidden_mult) % 2 != 0 {
                    return bad(format!(
                        "gMLP hidden width {} must be even",
                        self.gmlp_dim * self.gmlp_hidden_mult
                    ));
                }
            }
            HeadKind::Mlp | HeadKind::None => {
                if self.mlp_hidden.contains(&0) {
                    return bad(format!("MLP widths must be positive, got {:?}", self.mlp_hidden));
                }
            }
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return bad("leaky_relu slope must be finite".into());
            }
        }
        Ok(())
    }

    /// Whether the transformer stack is built at all.
    pub fn uses_transformer(&self) -> bool {
        self.head != HeadKind::None && self.transformer_depth > 0
    }

    pub fn gmlp_hidden(&self) -> usize {
        self.gmlp_dim * self.gmlp_hidden_mult
    }
}

const MODEL_KEYS: [&str; 10] = [
    "transformer_depth",
    "heads",
    "embed_dim",
    "head",
    "gmlp_depth",
    "gmlp_dim",
    "gmlp_hidden_mult",
    "mlp_hidden",
    "activation",
    "dropout",
];

impl ModelConfig {
    /// Overrides fields from the keys of `section`. Unknown keys are errors.
    pub fn apply_kv(&mut self, doc: &KvDocument, section: &str) -> Result<(), KvError> {
        if let Some(e) = doc.unknown_keys(section, &MODEL_KEYS).next() {
            return Err(e.error("unknown model key"));
        }
        for e in doc.entries().iter().filter(|e| e.section == section) {
            match e.key.as_str() {
                "transformer_depth" => self.transformer_depth = e.parse()?,
                "heads" => self.heads = e.parse()?,
                "embed_dim" => self.embed_dim = e.parse()?,
                "head" => self.head = e.parse()?,
                "gmlp_depth" => self.gmlp_depth = e.parse()?,
                "gmlp_dim" => self.gmlp_dim = e.parse()?,
                "gmlp_hidden_mult" => self.gmlp_hidden_mult = e.parse()?,
                "mlp_hidden" => self.mlp_hidden = e.parse_list()?,
                "activation" => self.activation = e.parse()?,
                "dropout" => self.dropout = e.parse()?,
                _ => unreachable!("filtered by unknown_keys"),
            }
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order, readable by [`Self::apply_kv`].
    pub fn to_kv(&self) -> String {
        let hidden: Vec<String> = self.mlp_hidden.iter().map(|w| w.to_string()).collect();
        format!(
            "transformer_depth = {}\nheads = {}\nembed_dim = {}\nhead = {}\ngmlp_depth = {}\ngmlp_dim = {}\ngmlp_hidden_mult = {}\nmlp_hidden = {}\nactivation = {}\ndropout = {}\n",
            self.transformer_depth,
            self.heads,
            self.embed_dim,
            self.head,
            self.gmlp_depth,
            self.gmlp_dim,
            self.gmlp_hidden_mult,
            hidden.join(", "),
            self.activation,
            self.dropout,
        )
    }
}

/// Input widths a model is built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    /// Training vocabulary size of each categorical column (unseen id excluded).
    pub vocab_sizes: Vec<usize>,
    pub n_continuous: usize,
}

impl InputSpec {
    pub fn n_categorical(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn of(schema: &crate::data::DatasetSchema) -> Self {
        Self {
            vocab_sizes: schema.vocab_sizes(),
            n_continuous: schema.n_continuous(),
        }
    }
}
