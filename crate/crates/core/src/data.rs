//! Series datasets, chronological splits, windowing, and synthetic data with
//! a known dependency graph.

use alloc::format;
use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Per-node z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Mean and population std of each column over `rows`. A zero std is
    /// replaced by 1 so constant nodes normalise to zero.
    pub fn fit(raw: &Tensor, rows: core::ops::Range<usize>) -> Self {
        let n = raw.cols();
        let count = rows.len() as f64;
        let mut mean = alloc::vec![0.0; n];
        for t in rows.clone() {
            for (m, v) in mean.iter_mut().zip(raw.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = alloc::vec![0.0; n];
        for t in rows {
            for ((s, v), m) in var.iter_mut().zip(raw.row(t)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    #[inline]
    pub fn normalize(&self, node: usize, v: f64) -> f64 {
        (v - self.mean[node]) / self.std[node]
    }

    #[inline]
    pub fn denormalize(&self, node: usize, v: f64) -> f64 {
        v * self.std[node] + self.mean[node]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Node-major multivariate series: `raw` is `T×N`, one row per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub raw: Tensor,
    pub t_in: usize,
    pub t_out: usize,
    /// `(train_end, valid_end)` row boundaries, set by [`split_and_normalize`](Self::split_and_normalize).
    pub split: Option<(usize, usize)>,
    pub norm: Option<Normalization>,
}

impl SeriesDataset {
    pub fn new(raw: Tensor, t_in: usize, t_out: usize) -> Result<Self> {
        if raw.rows() == 0 || raw.cols() == 0 {
            bail!(InsufficientData, "empty series");
        }
        if t_in == 0 || t_out == 0 {
            bail!(InvalidArgument, "t_in and t_out must be positive");
        }
        Ok(Self { raw, t_in, t_out, split: None, norm: None })
    }

    pub fn nodes(&self) -> usize {
        self.raw.cols()
    }

    pub fn steps(&self) -> usize {
        self.raw.rows()
    }

    /// Chronological train/valid/test split by `ratio` with z-score
    /// statistics fitted on the training rows only.
    pub fn split_and_normalize(mut self, ratio: [f64; 3]) -> Result<Self> {
        if ratio.iter().any(|r| !(*r > 0.0)) || (ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bail!(InvalidArgument, "split ratios {ratio:?} must be positive and sum to 1");
        }
        let t = self.steps();
        let train_end = (t as f64 * ratio[0]).round() as usize;
        let valid_end = (t as f64 * (ratio[0] + ratio[1])).round() as usize;
        let need = self.t_in + self.t_out;
        for (name, len) in [("train", train_end), ("valid", valid_end - train_end), ("test", t - valid_end)] {
            if len < need {
                bail!(InsufficientData, "{name} split has {len} rows, windows need {need}");
            }
        }
        self.norm = Some(Normalization::fit(&self.raw, 0..train_end));
        self.split = Some((train_end, valid_end));
        Ok(self)
    }

    pub fn split_rows(&self, split: Split) -> Result<core::ops::Range<usize>> {
        let Some((a, b)) = self.split else {
            bail!(InvalidArgument, "dataset has not been split");
        };
        Ok(match split {
            Split::Train => 0..a,
            Split::Valid => a..b,
            Split::Test => b..self.steps(),
        })
    }

    /// Sliding windows over one split, on the normalised scale.
    pub fn make_windows(&self, split: Split) -> Result<Windows> {
        let rows = self.split_rows(split)?;
        let norm = self.norm.as_ref().expect("split implies normalization");
        let n = self.nodes();
        let slab = Tensor::from_fn(rows.len(), n, |t, j| norm.normalize(j, self.raw.get(rows.start + t, j)));
        Windows::from_series(&slab, self.t_in, self.t_out)
    }
}

/// Batch of input/target windows. `x` is laid out `[B × t_in × N]`, `y` is
/// `[B × t_out × N]`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub count: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub nodes: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Windows {
    /// Window `b` pairs rows `[b, b + t_in)` with `[b + t_in, b + t_in + t_out)`.
    pub fn from_series(series: &Tensor, t_in: usize, t_out: usize) -> Result<Self> {
        let (len, n) = series.shape();
        if len < t_in + t_out {
            bail!(InsufficientData, "{len} rows cannot hold a {t_in}+{t_out} window");
        }
        let count = len - t_in - t_out + 1;
        let mut x = Vec::with_capacity(count * t_in * n);
        let mut y = Vec::with_capacity(count * t_out * n);
        for b in 0..count {
            x.extend_from_slice(&series.data()[b * n..(b + t_in) * n]);
            y.extend_from_slice(&series.data()[(b + t_in) * n..(b + t_in + t_out) * n]);
        }
        Ok(Self { count, t_in, t_out, nodes: n, x, y })
    }

    #[inline]
    pub fn x_at(&self, b: usize, t: usize, node: usize) -> f64 {
        self.x[(b * self.t_in + t) * self.nodes + node]
    }

    #[inline]
    pub fn y_at(&self, b: usize, h: usize, node: usize) -> f64 {
        self.y[(b * self.t_out + h) * self.nodes + node]
    }

    /// Model inputs for the windows `picks`: rows ordered (window, node),
    /// giving `x` as `[B·N × t_in]` and `y` as `[B·N × t_out]`.
    pub fn gather(&self, picks: &[usize]) -> (Tensor, Tensor) {
        let n = self.nodes;
        let x = Tensor::from_fn(picks.len() * n, self.t_in, |r, t| self.x_at(picks[r / n], t, r % n));
        let y = Tensor::from_fn(picks.len() * n, self.t_out, |r, h| self.y_at(picks[r / n], h, r % n));
        (x, y)
    }
}

/// Optional domain-knowledge adjacency.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PredefinedGraph {
    pub adjacency: Option<Tensor>,
}

impl PredefinedGraph {
    pub fn absent() -> Self {
        Self { adjacency: None }
    }

    /// Square, finite, non-negative. The diagonal is kept as given.
    pub fn dense(adjacency: Tensor) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() {
            bail!(Shape, "adjacency must be square, got {:?}", adjacency.shape());
        }
        if let Some(k) = adjacency.data().iter().position(|v| !v.is_finite() || *v < 0.0) {
            let n = adjacency.cols();
            bail!(InvalidArgument, "adjacency entry ({}, {}) = {} is not a non-negative number", k / n, k % n, adjacency.data()[k]);
        }
        Ok(Self { adjacency: Some(adjacency) })
    }

    pub fn present(&self) -> bool {
        self.adjacency.is_some()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Option<Tensor> {
        let mut a = self.adjacency.clone()?;
        for i in 0..a.rows() {
            let s: f64 = a.row(i).iter().sum();
            if s > 0.0 {
                a.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
        Some(a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    /// `x[t+1, i] = tanh(Σ_j w_ij x[t, j]) + ε`
    Var1Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub steps: usize,
    pub k_true: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub dynamics: Dynamics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// `T×N` series.
    pub series: Tensor,
    /// Row-major `N×N`; `truth[i*N + j]` means node `i` reads from node `j`.
    pub truth: Vec<bool>,
    /// Edge weights, zero off the true graph.
    pub weights: Tensor,
}

/// Draws a graph where every node has exactly `k_true` distinct parents
/// (never itself), weights `U(0.5, 1) / k_true`, then simulates the series
/// from `x[0] ~ N(0, 1)`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let n = spec.nodes;
    if spec.k_true == 0 || spec.k_true >= n {
        bail!(InvalidArgument, "k_true = {} must lie in 1..{n}", spec.k_true);
    }
    if spec.steps < 2 || !(spec.noise_std >= 0.0) {
        bail!(InvalidArgument, "need at least 2 steps and a non-negative noise std");
    }
    let mut rng = stream(spec.seed, Stream::Synthetic);
    let mut weights = Tensor::zeros(n, n);
    let mut truth = alloc::vec![false; n * n];
    for i in 0..n {
        for pick in index::sample(&mut rng, n - 1, spec.k_true) {
            let j = if pick >= i { pick + 1 } else { pick };
            truth[i * n + j] = true;
            let w: f64 = rng.random_range(0.5..1.0);
            weights.set(i, j, w / spec.k_true as f64);
        }
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let x0: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
    let series = simulate(&weights, &x0, spec.steps, spec.noise_std, &mut rng)?;
    Ok(SyntheticData { series, truth, weights })
}

/// Runs `x[t+1] = tanh(W x[t]) + ε` for `steps` rows starting at `x0`.
pub fn simulate<R: Rng + ?Sized>(weights: &Tensor, x0: &[f64], steps: usize, noise_std: f64, rng: &mut R) -> Result<Tensor> {
    let n = x0.len();
    if weights.shape() != (n, n) {
        bail!(Shape, "weights {:?} for {n} nodes", weights.shape());
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| crate::Error::InvalidArgument(format!("{e}")))?;
    let mut out = Tensor::zeros(steps, n);
    out.row_mut(0).copy_from_slice(x0);
    for t in 1..steps {
        for i in 0..n {
            let drive: f64 = (0..n).map(|j| weights.get(i, j) * out.get(t - 1, j)).sum();
            let eps = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            out.set(t, i, drive.tanh() + eps);
        }
    }
    Ok(out)
}
