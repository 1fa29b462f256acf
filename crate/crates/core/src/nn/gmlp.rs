use super::layers::{Activation, LayerNorm, Linear};
use super::params::{Ctx, Init, ParamId, ParamStore};
use super::ModelError;
use crate::autodiff::{Tensor, Var};

/// Bound of the uniform initialization of the spatial projection.
pub const SPATIAL_INIT_BOUND: f64 = 1e-3;

/// Spatial gating unit over `n` tokens.
///
/// The channel axis is split in half into a residual part and a gate part;
/// the gate part is normalized, mixed across tokens by `W` (`n x n`) plus a
/// per-token bias, and multiplies the residual part elementwise.
#[derive(Clone, Debug)]
pub struct SpatialGatingUnit {
    pub norm: LayerNorm,
    pub weight: ParamId,
    pub bias: ParamId,
    tokens: usize,
    channels: usize,
}

impl SpatialGatingUnit {
    /// `channels` is the full (pre-split) width and must be even.
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        tokens: usize,
        channels: usize,
    ) -> Result<Self, ModelError> {
        if channels % 2 != 0 || channels == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "spatial gating needs an even channel count, got {channels}"
            )));
        }
        let norm = LayerNorm::new(store, &format!("{name}.norm"), channels / 2);
        let weight = store.add(
            format!("{name}.weight"),
            init.uniform(&[tokens, tokens], SPATIAL_INIT_BOUND),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::full(&[tokens, 1], 1.0));
        Ok(Self {
            norm,
            weight,
            bias,
            tokens,
            channels,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// `(batch, n, channels)` -> `(batch, n, channels / 2)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, z: Var) -> Result<Var, ModelError> {
        let shape = ctx.graph.shape(z).to_vec();
        if shape.len() != 3 || shape[1] != self.tokens || shape[2] != self.channels {
            if shape.len() == 3 && shape[2] % 2 != 0 {
                return Err(ModelError::InvalidInput(format!(
                    "spatial gating needs an even channel count, got {}",
                    shape[2]
                )));
            }
            return Err(ModelError::InvalidInput(format!(
                "spatial gating expects (batch, {}, {}), got {shape:?}",
                self.tokens, self.channels
            )));
        }
        let half = self.channels / 2;
        let parts = ctx.graph.split(z, 2, &[half, half])?;
        let (residual, gate) = (parts[0], parts[1]);
        let gate = self.norm.forward(ctx, gate)?;
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        let gate = ctx.graph.matmul(w, gate)?;
        let gate = ctx.graph.add(gate, b)?;
        Ok(ctx.graph.mul(residual, gate)?)
    }
}

/// gMLP block with a pre-norm residual:
/// `out = x + V(s(Dropout(σ(U(LN(x))))))`.
#[derive(Clone, Debug)]
pub struct GmlpBlock {
    pub norm: LayerNorm,
    pub proj_in: Linear,
    pub activation: Activation,
    pub sgu: SpatialGatingUnit,
    pub proj_out: Linear,
    pub dropout: f64,
}

impl GmlpBlock {
    /// `hidden` is the width after the channel expansion and must be even.
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        tokens: usize,
        dim: usize,
        hidden: usize,
        activation: Activation,
        dropout: f64,
    ) -> Result<Self, ModelError> {
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim);
        let proj_in = Linear::new(store, init, &format!("{name}.proj_in"), dim, hidden);
        let sgu = SpatialGatingUnit::new(store, init, &format!("{name}.sgu"), tokens, hidden)?;
        let proj_out = Linear::new(store, init, &format!("{name}.proj_out"), hidden / 2, dim);
        Ok(Self {
            norm,
            proj_in,
            activation,
            sgu,
            proj_out,
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, ModelError> {
        let h = self.norm.forward(ctx, x)?;
        let h = self.proj_in.forward(ctx, h)?;
        let h = self.activation.apply(ctx.graph, h);
        let h = ctx.graph.dropout(h, self.dropout, ctx.train)?;
        let h = self.sgu.forward(ctx, h)?;
        let h = self.proj_out.forward(ctx, h)?;
        Ok(ctx.graph.add(x, h)?)
    }
}
