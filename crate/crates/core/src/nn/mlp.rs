use super::layers::{Activation, Linear};
use super::params::{Ctx, Init, ParamStore};
use super::ModelError;
use crate::autodiff::Var;

/// Feed-forward stack ending in a single raw logit.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Mlp {
    /// `hidden` lists the widths between the input and the final logit; it
    /// may be empty, giving a single affine map.
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        input: usize,
        hidden: &[usize],
        activation: Activation,
        dropout: f64,
    ) -> Result<Self, ModelError> {
        if input == 0 || hidden.contains(&0) {
            return Err(ModelError::InvalidConfig(format!(
                "MLP widths must be positive (input {input}, hidden {hidden:?})"
            )));
        }
        let widths: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, init, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Ok(Self {
            layers,
            activation,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// `(batch, k)` -> `(batch, 1)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, ModelError> {
        let shape = ctx.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(ModelError::InvalidInput(format!(
                "MLP expects (batch, {}), got {shape:?}",
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h)?;
            if i < last {
                h = self.activation.apply(ctx.graph, h);
                h = ctx.graph.dropout(h, self.dropout, ctx.train)?;
            }
        }
        Ok(h)
    }
}
