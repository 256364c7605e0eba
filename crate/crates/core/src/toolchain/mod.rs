//! Model-provider tooling: compile an operator graph into the model file
//! format, mask layer names, seal the model and emit the binary chain.

mod compile;
pub mod format;
mod graph;
pub mod reference;
mod seal;

pub use compile::{compile, validate, CompileError, MAX_DIM};
pub use format::{FormatError, LayerEntry, ModelFile, ModelImage, ModelPolicy, SealedModel, TensorPlacement};
pub use graph::{LayerSpec, OpKind, OperatorGraph, Shape, TensorDecl, TensorId, WeightTensor};
pub use seal::{chain_commitment, chain_message, mask_names, seal, unseal_for_test, BinaryChain, NameMap};
