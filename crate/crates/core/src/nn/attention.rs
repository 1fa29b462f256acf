use super::layers::{Activation, LayerNorm, Linear};
use super::params::{Ctx, Init, ParamId, ParamStore};
use super::ModelError;
use crate::autodiff::Var;

/// Width multiplier of the position-wise feed-forward sub-layer.
pub const FFN_MULT: usize = 4;

/// Multi-head scaled dot-product self-attention with `d x d` projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self, ModelError> {
        if heads == 0 || dim % heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "embedding dim {dim} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |suffix: &str| {
            store.add(
                format!("{name}.{suffix}"),
                init.kaiming_uniform(&[dim, dim], dim),
            )
        };
        Ok(Self {
            wq: proj("wq"),
            wk: proj("wk"),
            wv: proj("wv"),
            wo: proj("wo"),
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, tokens: Var) -> Result<Var, ModelError> {
        Ok(self.forward_with_weights(ctx, tokens)?.0)
    }

    /// Output tokens plus each head's `(batch, m, m)` attention weights.
    pub fn forward_with_weights(
        &self,
        ctx: &mut Ctx<'_>,
        tokens: Var,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let shape = ctx.graph.shape(tokens).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(ModelError::InvalidInput(format!(
                "attention expects (batch, tokens, {}), got {shape:?}",
                self.dim
            )));
        }
        let [wq, wk, wv, wo] = [self.wq, self.wk, self.wv, self.wo].map(|id| ctx.param(id));
        let g = &mut *ctx.graph;
        let q = g.matmul(tokens, wq)?;
        let k = g.matmul(tokens, wk)?;
        let v = g.matmul(tokens, wv)?;
        let dk = self.head_dim();
        let sizes = vec![dk; self.heads];
        let (qs, ks, vs) = if self.heads == 1 {
            (vec![q], vec![k], vec![v])
        } else {
            (g.split(q, 2, &sizes)?, g.split(k, 2, &sizes)?, g.split(v, 2, &sizes)?)
        };
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for ((qh, kh), vh) in qs.into_iter().zip(ks).zip(vs) {
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let w = g.softmax(scores);
            outputs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat(&outputs, 2)?
        };
        let out = g.matmul(merged, wo)?;
        Ok((out, weights))
    }
}

/// Pre-norm transformer encoder layer:
/// `t = x + Dropout(MHA(LN(x)))`, `out = t + Dropout(FFN(LN(t)))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub dropout: f64,
}

impl TransformerLayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
    ) -> Result<Self, ModelError> {
        let attn_norm = LayerNorm::new(store, &format!("{name}.attn_norm"), dim);
        let attention = MultiHeadAttention::new(store, init, &format!("{name}.attn"), dim, heads)?;
        let ffn_norm = LayerNorm::new(store, &format!("{name}.ffn_norm"), dim);
        let ffn_in = Linear::new(store, init, &format!("{name}.ffn_in"), dim, FFN_MULT * dim);
        let ffn_out = Linear::new(store, init, &format!("{name}.ffn_out"), FFN_MULT * dim, dim);
        Ok(Self {
            attn_norm,
            attention,
            ffn_norm,
            ffn_in,
            ffn_out,
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, tokens: Var) -> Result<Var, ModelError> {
        let h = self.attn_norm.forward(ctx, tokens)?;
        let h = self.attention.forward(ctx, h)?;
        let h = ctx.graph.dropout(h, self.dropout, ctx.train)?;
        let t = ctx.graph.add(tokens, h)?;

        let h = self.ffn_norm.forward(ctx, t)?;
        let h = self.ffn_in.forward(ctx, h)?;
        let h = Activation::Gelu.apply(ctx.graph, h);
        let h = self.ffn_out.forward(ctx, h)?;
        let h = ctx.graph.dropout(h, self.dropout, ctx.train)?;
        Ok(ctx.graph.add(t, h)?)
    }
}
