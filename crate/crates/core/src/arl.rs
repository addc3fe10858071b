//! Per-node attention over relation channels and weighted-concat fusion.
//!
//! For node `i` and channel `k` the score is
//! `(m_i·W_query)·(h^k_i·W_key) / √d`, softmaxed over the present channels.
//! Each channel is projected by the shared `W_value`, scaled by its own
//! coefficient, and the blocks are concatenated in channel order.

use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{Tape, Var};
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug)]
pub struct ArlVars {
    /// Node embeddings `M`, `N × d_m`.
    pub embedding: Var,
    pub w_query: Var,
    pub w_key: Var,
    pub w_value: Var,
}

pub const CHANNEL_NAMES: [&str; 3] = ["own", "implicit", "predefined"];

/// Attention coefficients `P`, `(B·N) × K`, for `channels` whose rows are
/// ordered (window, node). The embedding is shared across the `windows`
/// blocks.
pub fn attention_coeffs(tape: &mut Tape, p: &ArlVars, channels: &[Var], windows: usize) -> Result<Var> {
    if channels.len() < 2 {
        bail!(InvalidArgument, "attention over {} channel(s) is degenerate", channels.len());
    }
    let query = tape.matmul(p.embedding, p.w_query)?;
    let query = if windows > 1 { tape.tile_rows(query, windows)? } else { query };
    let d = tape.value(p.w_key).cols() as f64;
    let scores = channels
        .iter()
        .map(|&h| {
            let key = tape.matmul(h, p.w_key)?;
            let s = tape.row_dot(query, key)?;
            Ok(tape.scale(s, 1.0 / d.sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat_cols(&scores)?;
    tape.softmax_rows(scores, None)
}

/// `Z = concat_k(P[:, k] · H^k·W_value)`; without `coeffs` the value
/// projections are concatenated unweighted.
pub fn fuse(tape: &mut Tape, w_value: Var, channels: &[Var], coeffs: Option<Var>) -> Result<Var> {
    if let Some(p) = coeffs {
        if tape.value(p).cols() != channels.len() {
            bail!(Shape, "{} coefficients for {} channels", tape.value(p).cols(), channels.len());
        }
    }
    let mut blocks = Vec::with_capacity(channels.len());
    for (k, &h) in channels.iter().enumerate() {
        let v = tape.matmul(h, w_value)?;
        blocks.push(match coeffs {
            Some(p) => {
                let pk = tape.slice_cols(p, k, 1)?;
                tape.mul_col(v, pk)?
            }
            None => v,
        });
    }
    if blocks.len() == 1 {
        return Ok(blocks[0]);
    }
    tape.concat_cols(&blocks)
}
