//! Forecast error metrics: RSE, CORR, MAE, RMSE, MAPE.
//!
//! Inputs are `[samples × nodes]` row-major slices on the original scale.
//! CORR is computed per node over samples and averaged across nodes whose
//! ground truth varies; a node whose forecast is constant contributes 0.

use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rse: f64,
    pub corr: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64], nodes: usize) -> Self {
        Self {
            rse: rse(y, yhat),
            corr: corr(y, yhat, nodes),
            mae: mae(y, yhat),
            rmse: rmse(y, yhat),
            mape: mape(y, yhat),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.rse, self.corr, self.mae, self.rmse, self.mape].iter().all(|v| v.is_finite())
    }
}

/// `Σ(y − ŷ)² / Σ(y − ȳ)²`; NaN when the truth is constant.
pub fn rse(y: &[f64], yhat: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let num: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if den == 0.0 {
        return f64::NAN;
    }
    num / den
}

pub fn mae(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> f64 {
    (y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Mean absolute percentage error over entries with `y ≠ 0`, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> f64 {
    let (sum, count) = y
        .iter()
        .zip(yhat)
        .filter(|(a, _)| **a != 0.0)
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + ((a - b) / a).abs(), n + 1));
    if count == 0 {
        return f64::NAN;
    }
    100.0 * sum / count as f64
}

/// Node-averaged Pearson correlation.
pub fn corr(y: &[f64], yhat: &[f64], nodes: usize) -> f64 {
    let samples = y.len() / nodes;
    let mut total = 0.0;
    let mut counted = 0usize;
    for j in 0..nodes {
        let col = |v: &[f64], i: usize| v[i * nodes + j];
        let my = (0..samples).map(|i| col(y, i)).sum::<f64>() / samples as f64;
        let mp = (0..samples).map(|i| col(yhat, i)).sum::<f64>() / samples as f64;
        let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
        for i in 0..samples {
            let (dy, dp) = (col(y, i) - my, col(yhat, i) - mp);
            cov += dy * dp;
            vy += dy * dy;
            vp += dp * dp;
        }
        if vy == 0.0 {
            continue;
        }
        counted += 1;
        if vp > 0.0 {
            total += cov / (vy.sqrt() * vp.sqrt());
        }
    }
    if counted == 0 {
        return f64::NAN;
    }
    total / counted as f64
}

/// Metrics per forecast horizon (index 0 is one step ahead) and pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizons: Vec<Metrics>,
    pub overall: Metrics,
}

impl MetricReport {
    /// `y` and `yhat` are `[windows × t_out × nodes]`.
    pub fn compute(y: &[f64], yhat: &[f64], t_out: usize, nodes: usize) -> Self {
        let windows = y.len() / (t_out * nodes);
        let horizons = (0..t_out)
            .map(|h| {
                let pick = |v: &[f64]| -> Vec<f64> {
                    (0..windows).flat_map(|b| v[(b * t_out + h) * nodes..(b * t_out + h + 1) * nodes].iter().copied()).collect()
                };
                Metrics::compute(&pick(y), &pick(yhat), nodes)
            })
            .collect();
        Self { horizons, overall: Metrics::compute(y, yhat, nodes) }
    }

    /// Metrics at 1-based horizon `h`.
    pub fn at(&self, h: usize) -> Option<&Metrics> {
        self.horizons.get(h.checked_sub(1)?)
    }
}

/// 1-based horizons worth printing: 3, 6, 12 (the longer benchmark
/// convention), plus the final horizon; every horizon when `t_out < 3`.
pub fn reporting_horizons(t_out: usize) -> Vec<usize> {
    if t_out < 3 {
        return (1..=t_out).collect();
    }
    let mut hs: Vec<usize> = [3, 6, 12].into_iter().filter(|&h| h <= t_out).collect();
    if hs.last() != Some(&t_out) {
        hs.push(t_out);
    }
    hs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast() {
        let y: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let m = Metrics::compute(&y, &y, 3);
        assert_eq!((m.mae, m.rmse, m.rse, m.mape), (0.0, 0.0, 0.0, 0.0));
        assert!((m.corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_forecast_has_unit_rse() {
        let y = [1.0, 4.0, 2.0, 7.0];
        let mean = 3.5;
        assert!((rse(&y, &[mean; 4]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_entry_mape() {
        assert_eq!(mape(&[2.0], &[1.0]), 50.0);
        assert_eq!(mape(&[0.0, 2.0], &[5.0, 1.0]), 50.0);
        assert!(mape(&[0.0], &[1.0]).is_nan());
    }

    #[test]
    fn corr_skips_constant_truth_nodes() {
        // Node 0 varies and is matched affinely, node 1 is constant.
        let y = [1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
        let yhat = [3.0, 0.0, 5.0, 1.0, 7.0, 2.0];
        assert!((corr(&y, &yhat, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_slices_horizons() {
        // 2 windows, 3 horizons, 1 node; horizon 2 is perfect.
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let yhat = [0.0, 2.0, 3.5, 4.5, 5.0, 6.0];
        let r = MetricReport::compute(&y, &yhat, 3, 1);
        assert_eq!(r.horizons.len(), 3);
        assert_eq!(r.at(2).unwrap().mae, 0.0);
        assert_eq!(r.at(1).unwrap().mae, 0.75);
        assert!(r.at(4).is_none() && r.at(0).is_none());
    }

    #[test]
    fn reporting_convention() {
        assert_eq!(reporting_horizons(12), [3, 6, 12]);
        assert_eq!(reporting_horizons(1), [1]);
        assert_eq!(reporting_horizons(3), [3]);
        assert_eq!(reporting_horizons(24), [3, 6, 12, 24]);
        assert_eq!(reporting_horizons(8), [3, 6, 8]);
    }
}
