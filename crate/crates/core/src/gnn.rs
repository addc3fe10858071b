//! Relation channels: the node's own representation and propagation over the
//! learned and pre-defined adjacencies.

use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{bail, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Inverted dropout. A rate of zero or a missing RNG disables it.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut StreamRng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let (r, c) = tape.value(x).shape();
        let mask = Tensor::from_fn(r, c, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        tape.mul_const(x, mask)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `H¹ = ReLU(S·W₁ + b₁)·W₂ + b₂`.
pub fn own_mlp(tape: &mut Tape, s: Var, p: &MlpVars, dropout: &mut Dropout) -> Result<Var> {
    let z = tape.matmul(s, p.w1)?;
    let z = tape.add_row(z, p.b1)?;
    let a = tape.relu(z);
    let a = dropout.apply(tape, a)?;
    let out = tape.matmul(a, p.w2)?;
    tape.add_row(out, p.b2)
}

/// Stacked propagation `H ← adj·H·W⁽ⁱ⁾` over every `N`-row block of `s`,
/// ReLU and dropout between layers, final layer linear.
pub fn propagate(tape: &mut Tape, s: Var, adj: Var, weights: &[Var], dropout: &mut Dropout) -> Result<Var> {
    if weights.is_empty() {
        bail!(InvalidArgument, "propagation needs at least one layer");
    }
    let mut h = s;
    for (i, &w) in weights.iter().enumerate() {
        let projected = tape.matmul(h, w)?;
        h = tape.block_mix(adj, projected)?;
        if i + 1 < weights.len() {
            h = tape.relu(h);
            h = dropout.apply(tape, h)?;
        }
    }
    Ok(h)
}

/// Channel outputs in fusion order: own, then implicit, then pre-defined.
#[derive(Clone, Debug)]
pub struct RelationBundle {
    pub own: Var,
    pub implicit: Option<Var>,
    pub predefined: Option<Var>,
}

impl RelationBundle {
    pub fn channels(&self) -> Vec<Var> {
        core::iter::once(self.own).chain(self.implicit).chain(self.predefined).collect()
    }
}

pub struct GnnVars<'v> {
    pub own: MlpVars,
    pub implicit: &'v [Var],
    pub predefined: &'v [Var],
}

/// H¹ always; H² when a learned adjacency is given; H³ when a pre-defined
/// (row-normalised) adjacency is given.
pub fn build_bundle(
    tape: &mut Tape,
    s: Var,
    learned: Option<Var>,
    predefined: Option<Var>,
    p: &GnnVars,
    dropout: &mut Dropout,
) -> Result<RelationBundle> {
    let own = own_mlp(tape, s, &p.own, dropout)?;
    let implicit = match learned {
        Some(adj) => Some(propagate(tape, s, adj, p.implicit, dropout)?),
        None => None,
    };
    let predefined = match predefined {
        Some(adj) => Some(propagate(tape, s, adj, p.predefined, dropout)?),
        None => None,
    };
    Ok(RelationBundle { own, implicit, predefined })
}
