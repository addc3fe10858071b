//! Auto graph learner.
//!
//! Trainable logits `A[N×N]` define, per node, a categorical distribution over
//! candidate neighbours. During training `C` Gumbel-Softmax samples are drawn
//! per row and pooled into a row-stochastic adjacency; at inference the `C`
//! highest logits of each row are kept and softmax-normalised.

use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::error::{bail, Result};
use crate::rng::gumbel_noise;
use crate::tensor::Tensor;

/// Candidate-neighbour mask: everything except the diagonal, unless self
/// loops are allowed.
pub fn candidate_mask(n: usize, allow_self: bool) -> Vec<bool> {
    (0..n * n).map(|k| allow_self || k / n != k % n).collect()
}

/// Sampling probability of every edge: a masked row softmax of the logits.
pub fn edge_probs(tape: &mut Tape, logits: Var, allow_self: bool) -> Result<Var> {
    let (n, m) = tape.value(logits).shape();
    if n != m {
        bail!(Shape, "edge logits must be square, got {n}x{m}");
    }
    if n < 2 && !allow_self {
        bail!(InvalidArgument, "a graph with {n} node(s) has no candidate neighbours");
    }
    tape.softmax_rows(logits, Some(&candidate_mask(n, allow_self)))
}

/// One Gumbel-Softmax draw per row, `softmax((ln π + ε) / τ)`, with `noise`
/// holding ε. Entries with `π = 0` stay excluded. Differentiable in `π`.
pub fn gumbel_sample(tape: &mut Tape, probs: Var, noise: &Tensor, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        bail!(InvalidArgument, "temperature must be positive, got {temperature}");
    }
    let p = tape.value(probs);
    if p.shape() != noise.shape() {
        bail!(Shape, "noise {:?} for probabilities {:?}", noise.shape(), p.shape());
    }
    let mask: Vec<bool> = p.data().iter().map(|&v| v > 0.0).collect();
    // ln(0) is undefined; lift excluded entries to 1 before the log, the
    // softmax mask discards them afterwards.
    let lift = Tensor::new(p.rows(), p.cols(), mask.iter().map(|&k| if k { 0.0 } else { 1.0 }).collect())?;
    let lift = tape.constant(lift);
    let lifted = tape.add(probs, lift)?;
    let log_p = tape.log(lifted);
    let eps = tape.constant(noise.clone());
    let perturbed = tape.add(log_p, eps)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    tape.softmax_rows(scaled, Some(&mask))
}

/// Pools `C` samples into `a*_ij = Σ_c g^c_ij / Σ_c Σ_k g^c_ik`.
pub fn aggregate_samples(tape: &mut Tape, samples: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = samples.split_first() else {
        bail!(InvalidArgument, "cannot aggregate an empty sample list");
    };
    let mut total = first;
    for &s in rest {
        total = tape.add(total, s)?;
    }
    tape.normalize_rows(total)
}

/// Training-mode adjacency: probabilities, `samples` fresh Gumbel draws, pooled.
pub fn sample_adjacency<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    samples: usize,
    temperature: f64,
    allow_self: bool,
    rng: &mut R,
) -> Result<Var> {
    let probs = edge_probs(tape, logits, allow_self)?;
    let n = tape.value(logits).rows();
    let draws = (0..samples)
        .map(|_| {
            let noise = gumbel_noise(rng, n, n);
            gumbel_sample(tape, probs, &noise, temperature)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_samples(tape, &draws)
}

/// Candidate neighbours of `row` ordered by descending logit, ties to the
/// lower index.
pub fn ranked_neighbours(logits: &Tensor, row: usize, allow_self: bool) -> Vec<usize> {
    let r = logits.row(row);
    let mut idx: Vec<usize> = (0..r.len()).filter(|&j| allow_self || j != row).collect();
    idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    idx
}

/// Inference-mode adjacency: keep the `c` largest logits of each row and
/// softmax over them; zeros elsewhere.
pub fn topc_inference(logits: &Tensor, c: usize, allow_self: bool) -> Result<Tensor> {
    let n = logits.rows();
    if logits.cols() != n {
        bail!(Shape, "edge logits must be square, got {:?}", logits.shape());
    }
    let candidates = if allow_self { n } else { n.saturating_sub(1) };
    if c == 0 || c > candidates {
        bail!(InvalidArgument, "C = {c} outside 1..={candidates} for {n} nodes");
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        let kept = &ranked_neighbours(logits, i, allow_self)[..c];
        let max = logits.get(i, kept[0]);
        let total: f64 = kept.iter().map(|&j| (logits.get(i, j) - max).exp()).sum();
        for &j in kept {
            out.set(i, j, (logits.get(i, j) - max).exp() / total);
        }
    }
    Ok(out)
}

/// Fraction of predicted edges (non-zero entries of `adjacency`) that are
/// present in `truth`, pooled over all rows.
pub fn precision(adjacency: &Tensor, truth: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut predicted = 0usize;
    for (k, &w) in adjacency.data().iter().enumerate() {
        if w > 0.0 {
            predicted += 1;
            hits += usize::from(truth[k]);
        }
    }
    if predicted == 0 {
        return 0.0;
    }
    hits as f64 / predicted as f64
}

/// Mean logit over true off-diagonal edges minus mean over false ones.
pub fn logit_separation(logits: &Tensor, truth: &[bool]) -> f64 {
    let n = logits.rows();
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let v = logits.get(i, j);
            if truth[i * n + j] {
                on += v;
                n_on += 1;
            } else {
                off += v;
                n_off += 1;
            }
        }
    }
    on / n_on.max(1) as f64 - off / n_off.max(1) as f64
}

/// Value-level [`edge_probs`].
pub fn edge_probs_value(logits: &Tensor, allow_self: bool) -> Result<Tensor> {
    softmax_rows(logits, Some(&candidate_mask(logits.rows(), allow_self)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::error::Error;
    use crate::rng::{stream, Stream};
    use core::f64::consts::LN_2;

    fn probs_of(logits: &Tensor) -> Tensor {
        edge_probs_value(logits, false).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform_neighbour_probs() {
        let p = probs_of(&Tensor::filled(4, 4, 0.7));
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((p.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn edge_probs_ignore_self_logit() {
        let logits = Tensor::from_rows(&[[50.0, 0.0, LN_2], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let p = probs_of(&logits);
        assert_eq!(p.get(0, 0), 0.0);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.get(0, 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_node_has_no_neighbours() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(1, 1));
        assert!(matches!(edge_probs(&mut t, a, false), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn edge_probs_gradient() {
        let a = Tensor::from_fn(4, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.3 - 1.0);
        let w = Tensor::from_fn(4, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let err = grad_check(
            |t, v| {
                let p = edge_probs(t, v, false)?;
                let s = t.mul_const(p, w.clone())?;
                Ok(t.sum(s))
            },
            &a,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    fn sample_value(probs: &Tensor, noise: &Tensor, tau: f64) -> Tensor {
        let mut t = Tape::new();
        let p = t.constant(probs.clone());
        let g = gumbel_sample(&mut t, p, noise, tau).unwrap();
        t.value(g).clone()
    }

    #[test]
    fn zero_noise_unit_temperature_is_identity() {
        let p = probs_of(&Tensor::from_fn(5, 5, |i, j| (i * j) as f64 * 0.2));
        let g = sample_value(&p, &Tensor::zeros(5, 5), 1.0);
        assert!(g.max_abs_diff(&p) < 1e-15);

        let half = Tensor::from_rows(&[[0.5, 0.5]]);
        let g = sample_value(&half, &Tensor::zeros(1, 2), 0.5);
        assert!(g.max_abs_diff(&half) < 1e-15);
    }

    #[test]
    fn low_temperature_is_nearly_one_hot() {
        let mut rng = stream(11, Stream::Gumbel);
        let p = probs_of(&Tensor::from_fn(6, 6, |i, j| ((i + 2 * j) % 5) as f64 * 0.1));
        let noise = gumbel_noise(&mut rng, 6, 6);
        let g = sample_value(&p, &noise, 0.01);
        for i in 0..6 {
            let best = (0..6)
                .filter(|&j| j != i)
                .max_by(|&a, &b| (p.get(i, a).ln() + noise.get(i, a)).total_cmp(&(p.get(i, b).ln() + noise.get(i, b))))
                .unwrap();
            assert!((g.get(i, best) - 1.0).abs() <= 1e-6, "row {i}");
        }
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::from_rows(&[[0.5, 0.5]]));
        let noise = Tensor::zeros(1, 2);
        assert!(gumbel_sample(&mut t, p, &noise, 0.0).is_err());
        assert!(gumbel_sample(&mut t, p, &noise, -1.0).is_err());
    }

    #[test]
    fn aggregation_identities() {
        let mut t = Tape::new();
        assert!(aggregate_samples(&mut t, &[]).is_err());
        let s = Tensor::from_rows(&[[0.2, 0.8], [0.6, 0.4]]);
        let v = t.constant(s.clone());
        let one = aggregate_samples(&mut t, &[v]).unwrap();
        assert!(t.value(one).max_abs_diff(&s) < 1e-15);
        let two = aggregate_samples(&mut t, &[v, v]).unwrap();
        assert!(t.value(two).max_abs_diff(&s) < 1e-15);
    }

    #[test]
    fn topc_hand_evaluated_row() {
        // Neighbour logits [3, 1, 2, 5]; entry 0 is the node itself.
        let mut logits5 = Tensor::zeros(5, 5);
        logits5.row_mut(0).copy_from_slice(&[9.0, 3.0, 1.0, 2.0, 5.0]);
        let a = topc_inference(&logits5, 2, false).unwrap();
        let high = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((a.get(0, 4) - high).abs() < 1e-15);
        assert!((a.get(0, 1) - (1.0 - high)).abs() < 1e-15);
        assert!((high - 0.8808).abs() < 1e-4);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(0, 3), 0.0);
    }

    #[test]
    fn topc_full_width_matches_edge_probs() {
        let logits = Tensor::from_fn(5, 5, |i, j| ((3 * i + j) % 4) as f64 - 0.5 * j as f64);
        let a = topc_inference(&logits, 4, false).unwrap();
        assert!(a.max_abs_diff(&probs_of(&logits)) < 1e-15);
    }

    #[test]
    fn topc_ties_prefer_lower_index() {
        let logits = Tensor::filled(4, 4, 1.0);
        let a = topc_inference(&logits, 1, false).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.get(3, 0), 1.0);
    }

    #[test]
    fn topc_rejects_too_many_neighbours() {
        let logits = Tensor::zeros(4, 4);
        assert!(topc_inference(&logits, 4, false).is_err());
        assert!(topc_inference(&logits, 0, false).is_err());
        assert!(topc_inference(&logits, 4, true).is_ok());
    }

    #[test]
    fn sampled_adjacency_is_row_stochastic_without_self_loops() {
        let mut rng = stream(5, Stream::Gumbel);
        let mut t = Tape::new();
        let a = t.param(Tensor::from_fn(7, 7, |i, j| (i as f64 - j as f64) * 0.1));
        let adj = sample_adjacency(&mut t, a, 3, 0.5, false, &mut rng).unwrap();
        let v = t.value(adj);
        for i in 0..7 {
            assert_eq!(v.get(i, i), 0.0);
            assert!((v.row_sums()[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn precision_and_separation() {
        let truth = [false, true, false, true, false, false, false, true, false];
        let adj = Tensor::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert!((precision(&adj, &truth) - 2.0 / 3.0).abs() < 1e-15);
        let logits = Tensor::from_rows(&[[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert!((logit_separation(&logits, &truth) - 2.0).abs() < 1e-15);
    }
}
