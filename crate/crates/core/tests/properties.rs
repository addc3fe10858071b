use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relgraph_core::agl::{aggregate_samples, edge_probs, gumbel_sample, topc_inference};
use relgraph_core::autodiff::softmax_rows;
use relgraph_core::data::{Normalization, SeriesDataset, Split, Windows};
use relgraph_core::encoder::{encode_sequence, init_lstm, LstmVars};
use relgraph_core::rng::{gumbel_noise, normal, stream, Stream};
use relgraph_core::{grad_check_many, Tape, Tensor, Var};

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn row_sums_close(t: &Tensor, tol: f64) -> bool {
    t.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_rows_are_stochastic(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..10, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, rows, cols, scale);
        let mask: Vec<bool> = (0..rows * cols).map(|k| k % cols == 0 || rng.random_bool(0.7)).collect();
        let p = softmax_rows(&x, Some(&mask)).unwrap();
        prop_assert!(row_sums_close(&p, 1e-12));
        for (v, keep) in p.data().iter().zip(&mask) {
            prop_assert!(*v >= 0.0);
            if !keep {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn graph_learner_outputs_are_stochastic(seed in any::<u64>(), n in 2usize..=12, c_frac in 0.0f64..1.0, tau in 0.05f64..2.0) {
        let c = 1 + ((n - 1) as f64 * c_frac) as usize % (n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = normal(&mut rng, n, n, 2.0);
        let mut tape = Tape::new();
        let a = tape.param(logits.clone());
        let probs = edge_probs(&mut tape, a, false).unwrap();
        prop_assert!(row_sums_close(tape.value(probs), 1e-9));
        let draws: Vec<Var> = (0..c)
            .map(|_| {
                let noise = gumbel_noise(&mut rng, n, n);
                gumbel_sample(&mut tape, probs, &noise, tau).unwrap()
            })
            .collect();
        for d in &draws {
            prop_assert!(row_sums_close(tape.value(*d), 1e-9));
        }
        let pooled = aggregate_samples(&mut tape, &draws).unwrap();
        prop_assert!(row_sums_close(tape.value(pooled), 1e-9));
        for i in 0..n {
            prop_assert_eq!(tape.value(pooled).get(i, i), 0.0);
        }
        let inferred = topc_inference(&logits, c, false).unwrap();
        prop_assert!(row_sums_close(&inferred, 1e-9));
        for i in 0..n {
            prop_assert!(inferred.row(i).iter().filter(|&&v| v > 0.0).count() <= c);
            prop_assert_eq!(inferred.get(i, i), 0.0);
        }
    }

    #[test]
    fn composed_graphs_match_finite_differences(seed in any::<u64>(), depth in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, 3, 3, 1.0);
        let w = rand_tensor(&mut rng, 3, 3, 1.0);
        let ops: Vec<u8> = (0..depth).map(|_| rng.random_range(0..8)).collect();
        let err = grad_check_many(
            |t, v| {
                let mut h = v[0];
                for op in &ops {
                    h = match op {
                        0 => t.matmul(h, v[1])?,
                        1 => t.tanh(h),
                        2 => t.sigmoid(h),
                        3 => t.softmax_rows(h, None)?,
                        4 => { let s = t.scale(h, 0.5); t.exp(s) }
                        5 => t.mul(h, v[1])?,
                        6 => { let sq = t.mul(h, h)?; let one = t.constant(Tensor::filled(3, 3, 1.0)); let p = t.add(sq, one)?; t.log(p) }
                        _ => t.add(h, v[1])?,
                    };
                }
                Ok(t.sum(h))
            },
            &[x, w],
            1e-6,
        )
        .unwrap();
        prop_assert!(err <= 1e-4, "depth {} ops {:?}: {}", depth, ops, err);
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, 2, 3, 1.0);
        let w0 = rand_tensor(&mut rng, 3, 2, 1.0);
        let grad_of = |which: u8| -> Tensor {
            let mut t = Tape::new();
            let x = t.param(x0.clone());
            let w = t.constant(w0.clone());
            let f = { let m = t.matmul(x, w).unwrap(); let s = t.tanh(m); t.sum(s) };
            let g = { let e = t.sigmoid(x); let sq = t.mul(e, e).unwrap(); t.sum(sq) };
            let loss = match which {
                0 => f,
                1 => g,
                _ => { let a = t.scale(f, alpha); let b = t.scale(g, beta); t.add(a, b).unwrap() }
            };
            t.backward(loss).unwrap();
            t.grad(x).unwrap().clone()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for k in 0..gc.len() {
            let want = alpha * gf.data()[k] + beta * gg.data()[k];
            prop_assert!((gc.data()[k] - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = stream(seed, Stream::Init);
            let logits = normal(&mut rng, 5, 5, 1.0);
            let mut noise_rng = stream(seed, Stream::Gumbel);
            let mut t = Tape::new();
            let a = t.param(logits);
            let probs = edge_probs(&mut t, a, false).unwrap();
            let noise = gumbel_noise(&mut noise_rng, 5, 5);
            let s = gumbel_sample(&mut t, probs, &noise, 0.5).unwrap();
            let sq = t.mul(s, s).unwrap();
            let loss = t.sum(sq);
            t.backward(loss).unwrap();
            (t.value(s).clone(), t.grad(a).unwrap().clone())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        prop_assert!(v1.data().iter().zip(v2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(g1.data().iter().zip(g2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pooled_adjacency_lies_in_convex_hull(seed in any::<u64>(), n in 2usize..8, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let draws: Vec<Var> = (0..c)
            .map(|_| {
                let raw = Tensor::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
                tape.constant(softmax_rows(&raw.map(f64::ln), None).unwrap())
            })
            .collect();
        let pooled = aggregate_samples(&mut tape, &draws).unwrap();
        for i in 0..n {
            for j in 0..n {
                let vals: Vec<f64> = draws.iter().map(|d| tape.value(*d).get(i, j)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = tape.value(pooled).get(i, j);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn attention_softmax_ignores_shifts(seed in any::<u64>(), rows in 1usize..6, k in 2usize..4, shift in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = rand_tensor(&mut rng, rows, k, 5.0);
        let a = softmax_rows(&scores, None).unwrap();
        let b = softmax_rows(&scores.map(|v| v + shift), None).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn normalization_uses_training_rows_only(seed in any::<u64>(), t in 40usize..120, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A drift makes the later rows differ from the training block.
        let raw = Tensor::from_fn(t, n, |i, _| i as f64 * 0.1 + rng.random_range(-1.0..1.0));
        let ds = SeriesDataset::new(raw.clone(), 2, 1).unwrap().split_and_normalize([0.6, 0.2, 0.2]).unwrap();
        let (train_end, _) = ds.split.unwrap();
        let norm = ds.norm.clone().unwrap();
        prop_assert_eq!(&norm, &Normalization::fit(&raw, 0..train_end));
        let full = Normalization::fit(&raw, 0..t);
        prop_assert!(norm.mean.iter().zip(&full.mean).all(|(a, b)| a != b));
    }

    #[test]
    fn windows_reconstruct_the_series(seed in any::<u64>(), len in 3usize..40, n in 1usize..4, t_in in 1usize..5, t_out in 1usize..4) {
        prop_assume!(len >= t_in + t_out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = rand_tensor(&mut rng, len, n, 10.0);
        let w = Windows::from_series(&series, t_in, t_out).unwrap();
        prop_assert_eq!(w.count, len - t_in - t_out + 1);
        for b in 0..w.count {
            for j in 0..n {
                prop_assert_eq!(w.x_at(b, t_in - 1, j), series.get(b + t_in - 1, j));
                prop_assert_eq!(w.y_at(b, 0, j), series.get(b + t_in, j));
            }
        }
    }

    #[test]
    fn encoder_is_bounded_and_node_equivariant(seed in any::<u64>(), n in 2usize..6, t_in in 1usize..5, hidden in 1usize..5) {
        let mut rng = stream(seed, Stream::Init);
        let [w_ih, w_hh, bias] = init_lstm(&mut rng, 1, hidden);
        let x = normal(&mut rng, n, t_in, 3.0);
        let perm: Vec<usize> = (0..n).rev().collect();
        let x_perm = Tensor::from_fn(n, t_in, |i, t| x.get(perm[i], t));
        let encode = |input: &Tensor| {
            let mut t = Tape::new();
            let p = LstmVars { w_ih: t.constant(w_ih.clone()), w_hh: t.constant(w_hh.clone()), bias: t.constant(bias.clone()), hidden };
            let s = encode_sequence(&mut t, &p, input, 1).unwrap();
            t.value(s).clone()
        };
        let (s, sp) = (encode(&x), encode(&x_perm));
        prop_assert_eq!(s.shape(), (n, t_in * hidden));
        prop_assert!(s.data().iter().all(|v| v.abs() < 1.0));
        for i in 0..n {
            prop_assert_eq!(sp.row(i), s.row(perm[i]));
        }
    }
}

#[test]
fn sampled_rows_sharpen_as_temperature_falls() {
    let mut rng = stream(11, Stream::Gumbel);
    for _ in 0..20 {
        let logits = normal(&mut rng, 6, 6, 1.0);
        let noise = gumbel_noise(&mut rng, 6, 6);
        let mut tape = Tape::new();
        let a = tape.constant(logits);
        let probs = edge_probs(&mut tape, a, false).unwrap();
        let peaks: Vec<Vec<f64>> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&tau| {
                let s = gumbel_sample(&mut tape, probs, &noise, tau).unwrap();
                (0..6).map(|i| tape.value(s).row(i).iter().cloned().fold(0.0, f64::max)).collect()
            })
            .collect();
        for i in 0..6 {
            assert!(peaks[0][i] <= peaks[1][i] && peaks[1][i] <= peaks[2][i]);
        }
    }
}

#[test]
fn training_split_windows_match_direct_slicing() {
    let raw = Tensor::from_fn(50, 2, |i, j| (i * 2 + j) as f64);
    let ds = SeriesDataset::new(raw, 3, 2).unwrap().split_and_normalize([0.6, 0.2, 0.2]).unwrap();
    let w = ds.make_windows(Split::Train).unwrap();
    assert_eq!(w.count, 30 - 3 - 2 + 1);
    let norm = ds.norm.as_ref().unwrap();
    assert_eq!(w.x_at(4, 0, 1), norm.normalize(1, 9.0));
}
