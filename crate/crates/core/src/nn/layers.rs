use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::params::{Ctx, Init, ParamId, ParamStore};
use super::ModelError;
use crate::autodiff::{Graph, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Nonlinearity used inside the MLP and gMLP heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Selu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(self, graph: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => graph.relu(x),
            Activation::Gelu => graph.gelu(x),
            Activation::Selu => graph.selu(x),
            Activation::LeakyRelu { slope } => graph.leaky_relu(x, slope),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Gelu => f.write_str("gelu"),
            Activation::Selu => f.write_str("selu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
        }
    }
}

impl FromStr for Activation {
    type Err = ModelError;

    /// Accepts `relu`, `gelu`, `selu`, `leaky_relu` (slope 0.01) and
    /// `leaky_relu(<slope>)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "relu" => return Ok(Activation::Relu),
            "gelu" => return Ok(Activation::Gelu),
            "selu" => return Ok(Activation::Selu),
            "leaky_relu" => return Ok(Activation::LeakyRelu { slope: 0.01 }),
            _ => {}
        }
        s.strip_prefix("leaky_relu(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|slope| slope.trim().parse::<f64>().ok())
            .filter(|slope| slope.is_finite())
            .map(|slope| Activation::LeakyRelu { slope })
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown activation `{s}`")))
    }
}

/// `y = x W + b` over the last axis; `W` is stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.kaiming_uniform(&[in_dim, out_dim], in_dim),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, ModelError> {
        let y = ctx.graph.matmul(x, ctx.param(self.weight))?;
        Ok(ctx.graph.add(y, ctx.param(self.bias))?)
    }
}

/// Layer normalization over the last axis with a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta, dim }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, ModelError> {
        let n = ctx.graph.layer_norm(x, LAYER_NORM_EPS)?;
        let n = ctx.graph.mul(n, ctx.param(self.gamma))?;
        Ok(ctx.graph.add(n, ctx.param(self.beta))?)
    }
}
