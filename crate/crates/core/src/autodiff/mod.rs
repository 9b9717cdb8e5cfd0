//! Minimal reverse-mode differentiation for the codec: convolutions,
//! ConvLSTM cells, tanh/sigmoid, elementwise arithmetic and reductions.

mod conv;
mod convlstm;
mod gradcheck;
mod graph;
mod tensor;

pub use conv::ConvSpec;
pub use convlstm::{convlstm_cell, ConvLstmSpec, ConvLstmState, ConvLstmVars};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var, LSTM_GATES};
pub use tensor::{Scalar, Tensor};
