//! Translations between recurrent circuits and recurrent circuit-GNNs.

mod blocks;
pub mod circ2gnn;
pub mod exp_tower;
pub mod full;
pub mod inner;
pub mod outer;
pub mod report;
pub mod symmetric;

use thiserror::Error;

use crate::circuit::SymmetryWitness;
use crate::encoding::EncodeError;
use crate::gadgets::GadgetError;
use crate::gnn::GnnError;

pub use circ2gnn::{compile_circuit_to_outer_gnn, ActivationMode, OuterGnnArtifact};
pub use full::compile_gnn_full_to_circuit;
pub use inner::compile_gnn_inner_to_circuit;
pub use outer::compile_gnn_outer_to_circuit;
pub use report::CompileReport;
pub use symmetric::{compile_symmetric_circuit_to_inner_gnn, SymmetricArtifact};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("circuit is not symmetric: {0:?}")]
    NotSymmetric(SymmetryWitness),
    #[error("global activations need a predecessor-form circuit: {0}")]
    NotPredecessorForm(String),
}
