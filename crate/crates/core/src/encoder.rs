//! Shared single-layer LSTM over each node's input window.
//!
//! Gate blocks are packed in the order input, forget, cell, output. Weights
//! are stored input-major so a step is `x·W_ih + h·W_hh + b`:
//! `W_ih` is `d_in × 4h`, `W_hh` is `h × 4h`, `b` is `1 × 4h`.

use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{bail, Result};
use crate::rng::uniform;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// `W ~ U(-1/√h, 1/√h)`, forget-gate bias 1, other biases 0.
pub fn init_lstm<R: Rng + ?Sized>(rng: &mut R, d_in: usize, hidden: usize) -> [Tensor; 3] {
    let bound = 1.0 / (hidden as f64).sqrt();
    let w_ih = uniform(rng, d_in, 4 * hidden, bound);
    let w_hh = uniform(rng, hidden, 4 * hidden, bound);
    let bias = Tensor::from_fn(1, 4 * hidden, |_, j| if (hidden..2 * hidden).contains(&j) { 1.0 } else { 0.0 });
    [w_ih, w_hh, bias]
}

/// One LSTM step for every row of `x` (`rows × d_in`). `state` is `(h, c)`,
/// or `None` for the zero initial state.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let h = p.hidden;
    if tape.value(p.w_ih).cols() != 4 * h || tape.value(p.w_hh).shape() != (h, 4 * h) {
        bail!(Shape, "LSTM weights {:?}/{:?} for hidden size {h}", tape.value(p.w_ih).shape(), tape.value(p.w_hh).shape());
    }
    let mut gates = tape.matmul(x, p.w_ih)?;
    if let Some((h_prev, _)) = state {
        let rec = tape.matmul(h_prev, p.w_hh)?;
        gates = tape.add(gates, rec)?;
    }
    let gates = tape.add_row(gates, p.bias)?;
    let i_pre = tape.slice_cols(gates, 0, h)?;
    let f_pre = tape.slice_cols(gates, h, h)?;
    let g_pre = tape.slice_cols(gates, 2 * h, h)?;
    let o_pre = tape.slice_cols(gates, 3 * h, h)?;
    let i = tape.sigmoid(i_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let mut c = tape.mul(i, g)?;
    if let Some((_, c_prev)) = state {
        let f = tape.sigmoid(f_pre);
        let kept = tape.mul(f, c_prev)?;
        c = tape.add(kept, c)?;
    }
    let c_act = tape.tanh(c);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c))
}

/// Runs the LSTM over `x` (`rows × t_in·d_in`, step `t` in columns
/// `[t·d_in, (t+1)·d_in)`) and concatenates every step's hidden state into
/// `S` of width `t_in·h`.
pub fn encode_sequence(tape: &mut Tape, p: &LstmVars, x: &Tensor, d_in: usize) -> Result<Var> {
    if d_in == 0 || x.cols() % d_in != 0 {
        bail!(Shape, "input width {} is not a multiple of d_in = {d_in}", x.cols());
    }
    let t_in = x.cols() / d_in;
    if t_in == 0 {
        bail!(InvalidArgument, "encoder needs at least one input step");
    }
    let mut state = None;
    let mut hs = Vec::with_capacity(t_in);
    for t in 0..t_in {
        let step = Tensor::from_fn(x.rows(), d_in, |r, k| x.get(r, t * d_in + k));
        let xt = tape.constant(step);
        let (h, c) = lstm_step(tape, p, xt, state)?;
        hs.push(h);
        state = Some((h, c));
    }
    if hs.len() == 1 {
        return Ok(hs[0]);
    }
    tape.concat_cols(&hs)
}
