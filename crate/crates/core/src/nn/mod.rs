//! Neural building blocks: column embeddings, self-attention encoder
//! layers, gMLP blocks with spatial gating, and a plain MLP.
//!
//! Blocks own [`ParamId`]s into a shared [`ParamStore`]; a forward pass
//! binds the store onto a graph and threads a [`Ctx`] through the blocks.

mod attention;
mod embedding;
mod gmlp;
mod layers;
mod mlp;
mod params;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use attention::{MultiHeadAttention, TransformerLayer, FFN_MULT};
pub use embedding::ColumnEmbedding;
pub use gmlp::{GmlpBlock, SpatialGatingUnit, SPATIAL_INIT_BOUND};
pub use layers::{Activation, LayerNorm, Linear, LAYER_NORM_EPS};
pub use mlp::Mlp;
pub use params::{Ctx, ParamId, ParamStore};
pub(crate) use params::Init;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model input: {0}")]
    InvalidInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Standalone constructors for the blocks, for use outside a full model.
pub mod build {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Seeded builder that registers blocks into its own [`ParamStore`].
    pub struct Builder {
        pub store: ParamStore,
        rng: ChaCha8Rng,
    }

    impl Builder {
        pub fn new(seed: u64) -> Self {
            Self {
                store: ParamStore::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }
        }

        pub fn column_embedding(&mut self, name: &str, vocab_sizes: &[usize], dim: usize) -> ColumnEmbedding {
            ColumnEmbedding::new(&mut self.store, &mut Init::new(&mut self.rng), name, vocab_sizes, dim)
        }

        pub fn attention(&mut self, name: &str, dim: usize, heads: usize) -> Result<MultiHeadAttention, ModelError> {
            MultiHeadAttention::new(&mut self.store, &mut Init::new(&mut self.rng), name, dim, heads)
        }

        pub fn transformer_layer(
            &mut self,
            name: &str,
            dim: usize,
            heads: usize,
            dropout: f64,
        ) -> Result<TransformerLayer, ModelError> {
            TransformerLayer::new(&mut self.store, &mut Init::new(&mut self.rng), name, dim, heads, dropout)
        }

        pub fn spatial_gating(&mut self, name: &str, tokens: usize, channels: usize) -> Result<SpatialGatingUnit, ModelError> {
            SpatialGatingUnit::new(&mut self.store, &mut Init::new(&mut self.rng), name, tokens, channels)
        }

        #[allow(clippy::too_many_arguments)]
        pub fn gmlp_block(
            &mut self,
            name: &str,
            tokens: usize,
            dim: usize,
            hidden: usize,
            activation: Activation,
            dropout: f64,
        ) -> Result<GmlpBlock, ModelError> {
            GmlpBlock::new(
                &mut self.store,
                &mut Init::new(&mut self.rng),
                name,
                tokens,
                dim,
                hidden,
                activation,
                dropout,
            )
        }

        pub fn mlp(
            &mut self,
            name: &str,
            input: usize,
            hidden: &[usize],
            activation: Activation,
            dropout: f64,
        ) -> Result<Mlp, ModelError> {
            Mlp::new(&mut self.store, &mut Init::new(&mut self.rng), name, input, hidden, activation, dropout)
        }
    }
}
