//! GatedTabTransformer: a TabTransformer whose MLP classification head is
//! replaced by a stack of gMLP blocks, together with the data pipeline,
//! training loop, AUROC evaluation and grid-search tooling around it.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod hpo;
pub mod kv;
pub mod model;
pub mod nn;
pub mod train;
