//! Composite differentiable layers built from graph primitives.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;

/// Graph handles for one LSTM layer's parameters. Gate order along the
/// `4H` axis is input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub bias: NodeId,
}

/// One LSTM cell step. `x_t` is `[N, in]`, `h_prev` and `c_prev` are `[N, H]`.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    weights: &LstmWeights,
) -> Result<(NodeId, NodeId)> {
    let hidden = g.value(h_prev).shape().get(1).copied().ok_or_else(|| shape_err!("h_prev must be [N, H]"))?;
    if g.value(weights.w_ih).shape()[0] != 4 * hidden || g.value(c_prev).shape() != g.value(h_prev).shape() {
        return Err(shape_err!("lstm weights/state do not match hidden size {hidden}"));
    }
    let xi = g.linear(x_t, weights.w_ih, Some(weights.bias))?;
    let hh = g.linear(h_prev, weights.w_hh, None)?;
    let gates = g.add(xi, hh)?;
    let i = g.narrow(gates, 1, 0, hidden)?;
    let f = g.narrow(gates, 1, hidden, hidden)?;
    let cand = g.narrow(gates, 1, 2 * hidden, hidden)?;
    let o = g.narrow(gates, 1, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Mean absolute error between two equally shaped batches; `squared`
/// squares each sample's mean before averaging over the batch.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId, squared: bool) -> Result<NodeId> {
    let diff = g.sub(pred, target)?;
    let a = g.abs(diff);
    let per_sample = g.row_mean(a);
    let per_sample = if squared { g.square(per_sample) } else { per_sample };
    Ok(g.mean(per_sample))
}
