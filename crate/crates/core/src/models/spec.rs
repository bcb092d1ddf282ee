use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Transformer,
    Informer,
    Autoformer,
    DLinear,
    NLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Lstm,
        ModelKind::Transformer,
        ModelKind::Informer,
        ModelKind::Autoformer,
        ModelKind::DLinear,
        ModelKind::NLinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
            ModelKind::Informer => "informer",
            ModelKind::Autoformer => "autoformer",
            ModelKind::DLinear => "dlinear",
            ModelKind::NLinear => "nlinear",
        }
    }

    pub fn is_former(&self) -> bool {
        matches!(
            self,
            ModelKind::Transformer | ModelKind::Informer | ModelKind::Autoformer
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model `{s}`; expected one of lstm, transformer, informer, autoformer, dlinear, nlinear"
                ))
            })
    }
}

/// Squashing function for the LSTM cell candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellActivation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub candidate: CellActivation,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 32,
            layers: 1,
            dropout: 0.0,
            candidate: CellActivation::Tanh,
        }
    }
}

/// Shared shape of the Transformer, Informer and Autoformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// ProbSparse sampling factor (Informer) or delay factor (Autoformer).
    pub factor: f64,
    /// Rows of the window handed to the decoder as start tokens.
    pub label_len: usize,
    /// Moving-average kernel of the Autoformer decomposition.
    pub kernel: usize,
    pub positional_encoding: bool,
}

impl Default for FormerConfig {
    fn default() -> Self {
        FormerConfig {
            d_model: 16,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 1,
            d_ff: 32,
            dropout: 0.0,
            factor: 5.0,
            label_len: 48,
            kernel: 25,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    /// Moving-average kernel (DLinear only).
    pub kernel: usize,
    /// One weight vector per channel; otherwise one shared across channels.
    pub individual: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            kernel: 25,
            individual: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Lstm(LstmConfig),
    Transformer(FormerConfig),
    Informer(FormerConfig),
    Autoformer(FormerConfig),
    DLinear(LinearConfig),
    NLinear(LinearConfig),
}

impl ModelSpec {
    /// Desk-scale defaults for each kind.
    pub fn default_for(kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::Lstm => ModelSpec::Lstm(LstmConfig::default()),
            ModelKind::Transformer => ModelSpec::Transformer(FormerConfig::default()),
            ModelKind::Informer => ModelSpec::Informer(FormerConfig {
                decoder_layers: 2,
                ..FormerConfig::default()
            }),
            ModelKind::Autoformer => ModelSpec::Autoformer(FormerConfig {
                factor: 1.0,
                ..FormerConfig::default()
            }),
            ModelKind::DLinear => ModelSpec::DLinear(LinearConfig::default()),
            ModelKind::NLinear => ModelSpec::NLinear(LinearConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Lstm(_) => ModelKind::Lstm,
            ModelSpec::Transformer(_) => ModelKind::Transformer,
            ModelSpec::Informer(_) => ModelKind::Informer,
            ModelSpec::Autoformer(_) => ModelKind::Autoformer,
            ModelSpec::DLinear(_) => ModelKind::DLinear,
            ModelSpec::NLinear(_) => ModelKind::NLinear,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelSpec::Lstm(c) => c.dropout,
            ModelSpec::Transformer(c) | ModelSpec::Informer(c) | ModelSpec::Autoformer(c) => {
                c.dropout
            }
            ModelSpec::DLinear(_) | ModelSpec::NLinear(_) => 0.0,
        }
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        let dropout_ok = |p: f64| (0.0..1.0).contains(&p);
        match self {
            ModelSpec::Lstm(c) => {
                if c.hidden == 0 || c.layers == 0 {
                    return Err(Error::config(
                        "lstm hidden size and layer count must be positive",
                    ));
                }
                if !dropout_ok(c.dropout) {
                    return Err(Error::config("dropout must lie in [0, 1)"));
                }
            }
            ModelSpec::Transformer(c) | ModelSpec::Informer(c) | ModelSpec::Autoformer(c) => {
                if c.heads == 0 || c.d_model == 0 || c.d_model % c.heads != 0 {
                    return Err(Error::config(format!(
                        "d_model {} must be a positive multiple of heads {}",
                        c.d_model, c.heads
                    )));
                }
                if c.encoder_layers == 0 || c.decoder_layers == 0 || c.d_ff == 0 {
                    return Err(Error::config("layer counts and d_ff must be positive"));
                }
                if !dropout_ok(c.dropout) {
                    return Err(Error::config("dropout must lie in [0, 1)"));
                }
                if !(c.factor > 0.0) {
                    return Err(Error::config("factor must be positive"));
                }
                if self.kind() != ModelKind::Transformer && c.label_len == 0 {
                    return Err(Error::config("label_len must be positive"));
                }
                if self.kind() == ModelKind::Autoformer {
                    super::decomp::check_kernel(c.kernel, usize::MAX)?;
                }
            }
            ModelSpec::DLinear(c) => super::decomp::check_kernel(c.kernel, window)?,
            ModelSpec::NLinear(_) => {}
        }
        if window == 0 {
            return Err(Error::config("window length must be positive"));
        }
        Ok(())
    }
}
