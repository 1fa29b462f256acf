use super::params::{Ctx, Init, ParamId, ParamStore};
use super::ModelError;
use crate::autodiff::Var;

const EMBEDDING_STD: f64 = 0.05;

/// One learned vector per (column, category), plus a per-column vector for
/// categories never seen during training.
///
/// All columns share a single table; column `j` owns rows
/// `offsets[j] ..= offsets[j] + vocab_sizes[j]`, the last of which is the
/// unseen row. Id `vocab_sizes[j]` selects it.
#[derive(Clone, Debug)]
pub struct ColumnEmbedding {
    pub table: ParamId,
    offsets: Vec<usize>,
    vocab_sizes: Vec<usize>,
    dim: usize,
}

impl ColumnEmbedding {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        vocab_sizes: &[usize],
        dim: usize,
    ) -> Self {
        let mut offsets = Vec::with_capacity(vocab_sizes.len());
        let mut rows = 0;
        for &v in vocab_sizes {
            offsets.push(rows);
            rows += v + 1;
        }
        let table = store.add(
            format!("{name}.table"),
            init.normal(&[rows.max(1), dim], EMBEDDING_STD),
        );
        Self {
            table,
            offsets,
            vocab_sizes: vocab_sizes.to_vec(),
            dim,
        }
    }

    pub fn columns(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unseen_id(&self, column: usize) -> u32 {
        self.vocab_sizes[column] as u32
    }

    /// Row of the shared table holding `(column, id)`.
    pub fn row(&self, column: usize, id: u32) -> Result<usize, ModelError> {
        let vocab = self.vocab_sizes[column];
        if id as usize > vocab {
            return Err(ModelError::InvalidInput(format!(
                "column {column}: category id {id} out of range (vocab {vocab}, unseen id {vocab})"
            )));
        }
        Ok(self.offsets[column] + id as usize)
    }

    /// `cat_ids` is a row-major `batch x columns` matrix; returns `(batch, columns, dim)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, cat_ids: &[u32], batch: usize) -> Result<Var, ModelError> {
        let m = self.columns();
        if m == 0 || cat_ids.len() != batch * m {
            return Err(ModelError::InvalidInput(format!(
                "expected {batch} x {m} category ids, got {}",
                cat_ids.len()
            )));
        }
        let rows = cat_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| self.row(i % m, id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ctx
            .graph
            .embedding(ctx.param(self.table), &rows, &[batch, m])?)
    }
}
