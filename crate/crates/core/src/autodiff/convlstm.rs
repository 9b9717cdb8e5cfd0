//! Convolutional LSTM cell.
//!
//! ```text
//! [i, f, o, g] = conv(x; Wx, b) + conv(h; Wh)
//! cell'   = sigmoid(f) * cell + sigmoid(i) * tanh(g)
//! hidden' = sigmoid(o) * tanh(cell')
//! ```

use super::conv::ConvSpec;
use super::graph::{Graph, Var, LSTM_GATES};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Recurrent state carried between iterations.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmState {
    /// All-zero state for a `[batch, hidden_channels, h, w]` grid.
    pub fn zeros<F: Scalar>(g: &mut Graph<F>, shape: [usize; 4]) -> Self {
        ConvLstmState {
            hidden: g.constant(Tensor::zeros(&shape)),
            cell: g.constant(Tensor::zeros(&shape)),
        }
    }
}

/// Geometry of a ConvLSTM layer: the input-to-gates convolution may stride,
/// the hidden-to-gates convolution is always "same".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvLstmSpec {
    pub input: ConvSpec,
    pub hidden: ConvSpec,
}

impl ConvLstmSpec {
    pub fn new(
        in_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        stride: usize,
        hidden_kernel: usize,
    ) -> Result<Self> {
        if hidden_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden kernel must be odd to preserve spatial size, got {hidden_kernel}"
            )));
        }
        let gates = LSTM_GATES * hidden_channels;
        Ok(ConvLstmSpec {
            input: ConvSpec::new(in_channels, gates, kernel, stride, kernel / 2)?,
            hidden: ConvSpec::same(hidden_channels, gates, hidden_kernel)?,
        })
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden.in_channels
    }
}

/// Parameter handles of one ConvLSTM layer on a graph.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmVars {
    pub input_weight: Var,
    pub bias: Var,
    pub hidden_weight: Var,
    pub spec: ConvLstmSpec,
}

/// One ConvLSTM step; returns the new hidden tensor (the layer output) and
/// the new state.
pub fn convlstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    input: Var,
    state: &ConvLstmState,
    p: &ConvLstmVars,
) -> Result<(Var, ConvLstmState)> {
    let [n, _, h, w] = g.value(input).dims4()?;
    let expect = [
        n,
        p.spec.hidden_channels(),
        p.spec.input.output_size(h)?,
        p.spec.input.output_size(w)?,
    ];
    for (name, v) in [("hidden", state.hidden), ("cell", state.cell)] {
        let got = g.value(v).dims4()?;
        if got != expect {
            return Err(Error::shape(
                "convlstm_cell",
                format!(
                    "{name} state is {got:?} but input {:?} needs {expect:?}",
                    [n, h, w]
                ),
            ));
        }
    }
    let from_input = g.conv2d(input, p.input_weight, Some(p.bias), p.spec.input)?;
    // A zero, non-trainable hidden state contributes exactly nothing.
    let hidden_is_zero =
        !g.requires_grad(state.hidden) && g.value(state.hidden).data().iter().all(|v| v.is_zero());
    let gates = if hidden_is_zero {
        from_input
    } else {
        let from_hidden = g.conv2d(state.hidden, p.hidden_weight, None, p.spec.hidden)?;
        g.add(from_input, from_hidden)?
    };
    let acts = g.gate_activations(gates)?;
    let cell = g.lstm_cell(acts, state.cell)?;
    let hidden = g.lstm_hidden(acts, cell)?;
    Ok((hidden, ConvLstmState { hidden, cell }))
}
