//! Minimal reverse-mode autodiff engine with the layers the models need.

pub mod adam;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NnError, Var};
pub use layers::{BiLstm, Dense, Dropout, Embedding, LstmCellParams, Mode};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
