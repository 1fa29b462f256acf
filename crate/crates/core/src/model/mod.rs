//! The GatedTabTransformer and its two baselines behind one interface.
//!
//! Categorical columns are embedded and contextualised by `N` transformer
//! layers. Continuous columns pass through a learned layer norm. The gMLP head
//! appends the normalized continuous values as one extra token, runs `L` gMLP
//! blocks over the token sequence, mean-pools and projects to a logit. The MLP
//! head flattens the contextual tokens, concatenates the normalized continuous
//! values and runs an MLP.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use config::{HeadKind, InputSpec, ModelConfig};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Dataset;
use crate::nn::{
    ColumnEmbedding, Ctx, GmlpBlock, Init, LayerNorm, Linear, Mlp, ModelError, ParamStore,
    TransformerLayer,
};

/// Rows of encoded input: row-major `rows x m` category ids and
/// `rows x c` continuous values.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub cat: &'a [u32],
    pub cont: &'a [f64],
    pub rows: usize,
}

impl<'a> Batch<'a> {
    pub fn of(dataset: &'a Dataset) -> Self {
        Self {
            cat: &dataset.cat,
            cont: &dataset.cont,
            rows: dataset.n_rows(),
        }
    }
}

#[derive(Clone, Debug)]
enum Head {
    Gmlp {
        cont_proj: Option<Linear>,
        adapter: Option<Linear>,
        blocks: Vec<GmlpBlock>,
        out: Linear,
    },
    Mlp(Mlp),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub input: InputSpec,
    pub params: ParamStore,
    embedding: Option<ColumnEmbedding>,
    transformer: Vec<TransformerLayer>,
    cont_norm: Option<LayerNorm>,
    head: Head,
}

impl Model {
    /// Builds a freshly initialised model. The embedding and transformer
    /// parameters are drawn from a stream that does not depend on the head,
    /// so two models differing only in head kind share them exactly.
    pub fn build(config: &ModelConfig, input: &InputSpec, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (m, c) = (input.n_categorical(), input.n_continuous);
        if m + c == 0 {
            return Err(ModelError::InvalidConfig("the input has no feature columns".into()));
        }
        if input.vocab_sizes.contains(&0) {
            return Err(ModelError::InvalidConfig(
                "every categorical column needs at least one training category".into(),
            ));
        }
        let d = config.embed_dim;
        let mut params = ParamStore::new();

        let mut trunk_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut trunk_rng);
        let embedding =
            (m > 0).then(|| ColumnEmbedding::new(&mut params, &mut init, "embed", &input.vocab_sizes, d));
        let transformer = if m > 0 && config.uses_transformer() {
            (0..config.transformer_depth)
                .map(|i| {
                    TransformerLayer::new(
                        &mut params,
                        &mut init,
                        &format!("transformer.{i}"),
                        d,
                        config.heads,
                        config.dropout,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let cont_norm = (c > 0).then(|| LayerNorm::new(&mut params, "cont_norm", c));

        let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
        head_rng.set_stream(1);
        let mut init = Init::new(&mut head_rng);
        let head = match config.head {
            HeadKind::Gmlp => {
                let cont_proj = (c > 0).then(|| Linear::new(&mut params, &mut init, "cont_proj", c, d));
                let tokens = m + usize::from(c > 0);
                let width = config.gmlp_dim;
                let adapter =
                    (width != d).then(|| Linear::new(&mut params, &mut init, "adapter", d, width));
                let blocks = (0..config.gmlp_depth)
                    .map(|i| {
                        GmlpBlock::new(
                            &mut params,
                            &mut init,
                            &format!("gmlp.{i}"),
                            tokens,
                            width,
                            config.gmlp_hidden(),
                            config.activation,
                            config.dropout,
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let out = Linear::new(&mut params, &mut init, "out", width, 1);
                Head::Gmlp {
                    cont_proj,
                    adapter,
                    blocks,
                    out,
                }
            }
            HeadKind::Mlp | HeadKind::None => Head::Mlp(Mlp::new(
                &mut params,
                &mut init,
                "mlp",
                m * d + c,
                &config.mlp_hidden,
                config.activation,
                config.dropout,
            )?),
        };
        Ok(Self {
            config: config.clone(),
            input: input.clone(),
            params,
            embedding,
            transformer,
            cont_norm,
            head,
        })
    }

    /// Exact number of scalar trainable parameters.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<(), ModelError> {
        let (m, c) = (self.input.n_categorical(), self.input.n_continuous);
        if batch.rows == 0 {
            return Err(ModelError::InvalidInput("empty batch".into()));
        }
        if batch.cat.len() != batch.rows * m || batch.cont.len() != batch.rows * c {
            return Err(ModelError::InvalidInput(format!(
                "expected {} rows of {m} categorical and {c} continuous values, got {} and {}",
                batch.rows,
                batch.cat.len(),
                batch.cont.len()
            )));
        }
        if let Some(pos) = batch.cont.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput(format!(
                "non-finite continuous value in row {}, column {}",
                pos / c,
                pos % c
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `ctx.graph` and returns `(rows, 1)` logits.
    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &Batch<'_>) -> Result<Var, ModelError> {
        self.check_batch(batch)?;
        let b = batch.rows;
        let c = self.input.n_continuous;

        let tokens = match &self.embedding {
            Some(embedding) => {
                let mut t = embedding.forward(ctx, batch.cat, b)?;
                for layer in &self.transformer {
                    t = layer.forward(ctx, t)?;
                }
                Some(t)
            }
            None => None,
        };
        let cont = match &self.cont_norm {
            Some(norm) => {
                let x = ctx
                    .graph
                    .constant(Tensor::new(vec![b, c], batch.cont.to_vec())?);
                Some(norm.forward(ctx, x)?)
            }
            None => None,
        };

        match &self.head {
            Head::Gmlp {
                cont_proj,
                adapter,
                blocks,
                out,
            } => {
                let mut parts = Vec::with_capacity(2);
                parts.extend(tokens);
                if let (Some(proj), Some(x)) = (cont_proj, cont) {
                    let t = proj.forward(ctx, x)?;
                    let d = self.config.embed_dim;
                    parts.push(ctx.graph.reshape(t, &[b, 1, d])?);
                }
                let mut seq = if parts.len() == 1 {
                    parts[0]
                } else {
                    ctx.graph.concat(&parts, 1)?
                };
                if let Some(adapter) = adapter {
                    seq = adapter.forward(ctx, seq)?;
                }
                for block in blocks {
                    seq = block.forward(ctx, seq)?;
                }
                let by_channel = ctx.graph.transpose(seq)?;
                let pooled = ctx.graph.mean_last_dim(by_channel);
                out.forward(ctx, pooled)
            }
            Head::Mlp(mlp) => {
                let mut parts = Vec::with_capacity(2);
                if let Some(t) = tokens {
                    let width = self.input.n_categorical() * self.config.embed_dim;
                    parts.push(ctx.graph.reshape(t, &[b, width])?);
                }
                parts.extend(cont);
                let x = if parts.len() == 1 {
                    parts[0]
                } else {
                    ctx.graph.concat(&parts, 1)?
                };
                mlp.forward(ctx, x)
            }
        }
    }

    /// Mean binary cross-entropy of a batch and its gradient with respect to
    /// every parameter, in [`ParamStore`] order. `dropout_seed` drives the
    /// dropout masks when `train` is set.
    pub fn loss_and_grads(
        &self,
        batch: &Batch<'_>,
        labels: &[f64],
        train: bool,
        dropout_seed: u64,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut graph = Graph::with_seed(dropout_seed);
        let vars = self.params.bind(&mut graph, true);
        let logits = {
            let mut ctx = Ctx::new(&mut graph, &vars, train);
            self.forward(&mut ctx, batch)?
        };
        let loss = graph.bce_with_logits(logits, labels)?;
        let value = graph.value(loss).data()[0];
        let mut grads = graph.backward(loss)?;
        let grads = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, grads))
    }

    /// Eval-mode logits, computed in fixed-size chunks.
    pub fn logits(&self, batch: &Batch<'_>) -> Result<Vec<f64>, ModelError> {
        const CHUNK: usize = 1024;
        self.check_batch(batch)?;
        let (m, c) = (self.input.n_categorical(), self.input.n_continuous);
        let mut out = Vec::with_capacity(batch.rows);
        let mut start = 0;
        while start < batch.rows {
            let end = (start + CHUNK).min(batch.rows);
            let chunk = Batch {
                cat: &batch.cat[start * m..end * m],
                cont: &batch.cont[start * c..end * c],
                rows: end - start,
            };
            let mut graph = Graph::new();
            let vars = self.params.bind(&mut graph, false);
            let mut ctx = Ctx::new(&mut graph, &vars, false);
            let logits = self.forward(&mut ctx, &chunk)?;
            out.extend_from_slice(graph.value(logits).data());
            start = end;
        }
        Ok(out)
    }

    /// Eval-mode positive-class probabilities.
    pub fn predict_proba(&self, batch: &Batch<'_>) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .logits(batch)?
            .into_iter()
            .map(crate::autodiff::sigmoid)
            .collect())
    }

    /// Overwrites the parameters with `tensors` (same order and shapes).
    pub fn load_params(&mut self, tensors: Vec<Tensor>) -> Result<(), ModelError> {
        self.params.load(tensors)
    }
}
