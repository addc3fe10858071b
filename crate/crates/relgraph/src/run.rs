//! The verbs behind the command line, usable as a library.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use relgraph_core::agl::topc_inference;
use relgraph_core::arl::CHANNEL_NAMES;
use relgraph_core::data::{gen_synthetic, SeriesDataset, Split, Windows};
use relgraph_core::metrics::{reporting_horizons, MetricReport, Metrics};
use relgraph_core::model::GRAPH_LOGITS;
use relgraph_core::train::{denormalize, evaluate, predict, train, EpochRecord, TrainError, TrainingData};
use relgraph_core::{Mode, ModelState, Tape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Setting, SyntheticConfig};
use crate::error::{Error, Result};
use crate::io::{csv_row, load_adjacency, load_series, provenance, write_lines, write_matrix};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS_HEADER: &str = "epoch,split,label,horizon,rse,corr,mae,rmse,mape";

/// A split, normalised series plus its optional graph.
pub struct Prepared {
    pub dataset: SeriesDataset,
    /// Row-normalised pre-defined adjacency.
    pub predefined: Option<Tensor>,
}

impl Prepared {
    pub fn windows(&self, split: Split) -> Result<Windows> {
        Ok(self.dataset.make_windows(split)?)
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let path = cfg.series.as_deref().ok_or_else(|| Error::Config("`series` is not set".into()))?;
    let raw = load_series(path, cfg.nodes)?;
    let graph = load_adjacency(cfg.adjacency.as_deref(), raw.cols(), cfg.adjacency_format)?;
    let dataset = SeriesDataset::new(raw, cfg.t_in, cfg.t_out)?.split_and_normalize(cfg.split)?;
    Ok(Prepared { dataset, predefined: graph.row_normalized() })
}

pub fn checkpoint_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| out_dir.join(CHECKPOINT))
}

fn metric_line(epoch: usize, split: &str, label: &str, horizon: &str, m: &Metrics) -> String {
    format!("{epoch},{split},{label},{horizon},{}", csv_row(&[m.rse, m.corr, m.mae, m.rmse, m.mape]))
}

/// One line per horizon plus the pooled `all` line.
pub fn metric_lines(epoch: usize, split: &str, label: &str, report: &MetricReport) -> Vec<String> {
    let mut out: Vec<String> =
        report.horizons.iter().enumerate().map(|(h, m)| metric_line(epoch, split, label, &(h + 1).to_string(), m)).collect();
    out.push(metric_line(epoch, split, label, "all", &report.overall));
    out
}

#[derive(Debug)]
pub struct TrainSummary {
    pub seed: u64,
    pub label: String,
    pub best_epoch: usize,
    pub test: MetricReport,
    pub history: Vec<EpochRecord>,
}

/// Trains, then writes `metrics.csv`, the best checkpoint, and `config.cfg`
/// into `out_dir`. On divergence the last good state is saved before the
/// error is returned.
pub fn train_run(cfg: &RunConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    let prep = prepare(cfg)?;
    let nodes = prep.dataset.nodes();
    let model = cfg.model_config(nodes, prep.predefined.is_some());
    let label = model.label();
    let norm = prep.dataset.norm.clone().expect("prepared datasets are normalised");
    let (tr, va, te) = (prep.windows(Split::Train)?, prep.windows(Split::Valid)?, prep.windows(Split::Test)?);
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let header = provenance(&cfg.hash(), cfg.seed);
    let ckpt_path = checkpoint_path(cfg, out_dir);
    let metrics_path = out_dir.join("metrics.csv");
    let config_path = out_dir.join("config.cfg");
    write_lines(&config_path, &header, cfg.render().lines())?;

    let mut lines = vec![METRICS_HEADER.to_string()];
    let data = TrainingData { train: &tr, valid: &va, predefined: prep.predefined.as_ref() };
    let outcome = train(model, cfg.train_config(), norm, &data, |rec, _| {
        lines.extend(metric_lines(rec.epoch, "valid", &label, &rec.valid));
        log(&format!(
            "epoch {:>3}  train_loss {:.6}  valid_loss {:.6}  valid_rse {:.4}",
            rec.epoch, rec.train_loss, rec.valid_loss, rec.valid.overall.rse
        ));
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, reason, last_good }) => {
            Checkpoint::new(cfg.clone(), *last_good).save(&ckpt_path)?;
            write_lines(&metrics_path, &header, &lines)?;
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: {reason}; last good state saved to {}",
                ckpt_path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let test = evaluate(&outcome.best, &te, prep.predefined.as_ref())?;
    lines.extend(metric_lines(outcome.best.epoch, "test", &label, &test));
    write_lines(&metrics_path, &header, &lines)?;
    Checkpoint::new(cfg.clone(), outcome.best.clone()).save(&ckpt_path)?;
    Ok(TrainSummary { seed: cfg.seed, label, best_epoch: outcome.best.epoch, test, history: outcome.history })
}

/// `repeats` runs with seeds `seed, seed+1, …`, each in its own `seed-<s>`
/// directory when there is more than one.
pub fn train_repeats(cfg: &RunConfig, out_dir: &Path, repeats: usize, log: &mut dyn FnMut(&str)) -> Result<Vec<TrainSummary>> {
    if repeats == 0 {
        return Err(Error::Config("--repeats must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(repeats);
    for r in 0..repeats as u64 {
        let mut run = cfg.clone();
        run.seed = cfg.seed + r;
        let dir = if repeats == 1 { out_dir.to_path_buf() } else { out_dir.join(format!("seed-{}", run.seed)) };
        if repeats > 1 {
            run.checkpoint = cfg.checkpoint.as_ref().map(|_| dir.join(CHECKPOINT));
            log(&format!("run {}/{repeats}, seed {}", r + 1, run.seed));
        }
        out.push(train_run(&run, &dir, log)?);
    }
    if repeats > 1 {
        write_repeats(cfg, out_dir, &out)?;
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pick(m: &Metrics) -> [f64; 5] {
    [m.rse, m.corr, m.mae, m.rmse, m.mape]
}

/// Horizon labels shown in reports: the reporting horizons plus `all`.
fn report_rows(report: &MetricReport, t_out: usize) -> Vec<(String, Metrics)> {
    let mut rows: Vec<(String, Metrics)> =
        reporting_horizons(t_out).into_iter().filter_map(|h| report.at(h).map(|m| (h.to_string(), *m))).collect();
    rows.push(("all".into(), report.overall));
    rows
}

fn write_repeats(cfg: &RunConfig, out_dir: &Path, runs: &[TrainSummary]) -> Result<()> {
    let mut lines = vec!["seed,label,horizon,rse,corr,mae,rmse,mape".to_string()];
    for r in runs {
        for (h, m) in report_rows(&r.test, cfg.t_out) {
            lines.push(format!("{},{},{h},{}", r.seed, r.label, csv_row(&pick(&m))));
        }
    }
    for (h, _) in report_rows(&runs[0].test, cfg.t_out) {
        let per_run: Vec<[f64; 5]> = runs.iter().map(|r| pick(&row_for(&r.test, &h))).collect();
        let stats: Vec<(f64, f64)> = (0..5).map(|k| mean_std(&per_run.iter().map(|v| v[k]).collect::<Vec<_>>())).collect();
        let label = &runs[0].label;
        lines.push(format!("mean,{label},{h},{}", csv_row(&stats.iter().map(|s| s.0).collect::<Vec<_>>())));
        lines.push(format!("std,{label},{h},{}", csv_row(&stats.iter().map(|s| s.1).collect::<Vec<_>>())));
    }
    write_lines(&out_dir.join("repeats.csv"), &provenance(&cfg.hash(), cfg.seed), lines)
}

fn row_for(report: &MetricReport, h: &str) -> Metrics {
    match h.parse::<usize>() {
        Ok(h) => *report.at(h).expect("reported horizon exists"),
        Err(_) => report.overall,
    }
}

const TABLE_HEAD: &str = "horizon       RSE     CORR        MAE       RMSE      MAPE";

fn table_row(h: &str, m: &[f64; 5]) -> String {
    format!("{h:>7}  {:>8.4} {:>8.4} {:>10.2} {:>10.2} {:>8.2}%", m[0], m[1], m[2], m[3], m[4])
}

/// Per-horizon table in the usual benchmark layout.
pub fn format_report(label: &str, split: &str, report: &MetricReport, t_out: usize) -> String {
    let mut out = format!("{label} | {split}\n{TABLE_HEAD}\n");
    for (h, m) in report_rows(report, t_out) {
        let _ = writeln!(out, "{}", table_row(&h, &pick(&m)));
    }
    out
}

/// Mean ± std over repeated runs.
pub fn format_repeats(runs: &[TrainSummary], t_out: usize) -> String {
    let label = runs.first().map_or("", |r| r.label.as_str());
    let mut out = format!("{label} | test, mean ± std over {} runs\n{TABLE_HEAD}\n", runs.len());
    let Some(first) = runs.first() else { return out };
    for (h, _) in report_rows(&first.test, t_out) {
        let per_run: Vec<[f64; 5]> = runs.iter().map(|r| pick(&row_for(&r.test, &h))).collect();
        let stats: Vec<(f64, f64)> = (0..5).map(|k| mean_std(&per_run.iter().map(|v| v[k]).collect::<Vec<_>>())).collect();
        let mean: [f64; 5] = std::array::from_fn(|k| stats[k].0);
        let _ = writeln!(out, "{}", table_row(&h, &mean));
        let _ = writeln!(
            out,
            "      ±  {:>8.4} {:>8.4} {:>10.2} {:>10.2} {:>8.2}%",
            stats[0].1, stats[1].1, stats[2].1, stats[3].1, stats[4].1
        );
    }
    out
}

/// The checkpoint named by `settings` (or the default under `out_dir`) and
/// the run config: the checkpoint's own config with `settings` on top.
pub fn load_checkpoint(settings: &[Setting], out_dir: &Path) -> Result<(RunConfig, Checkpoint)> {
    let probe = RunConfig::from_settings(settings)?;
    let ckpt = Checkpoint::load(&checkpoint_path(&probe, out_dir))?;
    let cfg = ckpt.config.clone().overlay(settings)?;
    Ok((cfg, ckpt))
}

/// Loads the data for an existing model, normalised with the model's own
/// statistics.
pub fn prepare_for(cfg: &RunConfig, state: &ModelState) -> Result<Prepared> {
    let m = &state.model;
    if (cfg.t_in, cfg.t_out) != (m.t_in, m.t_out) {
        return Err(Error::Config(format!(
            "config asks for t_in={} t_out={}, but the checkpoint was trained with t_in={} t_out={}",
            cfg.t_in, cfg.t_out, m.t_in, m.t_out
        )));
    }
    let mut prep = prepare(cfg)?;
    if prep.dataset.nodes() != m.nodes {
        return Err(Error::Data(format!("series has {} nodes, the checkpoint expects {}", prep.dataset.nodes(), m.nodes)));
    }
    if m.has_predefined && prep.predefined.is_none() {
        return Err(Error::Config("the checkpoint was trained with a pre-defined graph; set `adjacency`".into()));
    }
    prep.dataset.norm = Some(state.norm.clone());
    Ok(prep)
}

pub fn evaluate_run(cfg: &RunConfig, ckpt: &Checkpoint, split: Split) -> Result<MetricReport> {
    let prep = prepare_for(cfg, &ckpt.state)?;
    let windows = prep.windows(split)?;
    Ok(evaluate(&ckpt.state, &windows, prep.predefined.as_ref())?)
}

/// Forecasts the `t_out` steps after the end of the series into
/// `forecast.csv`, one row per horizon, original scale.
pub fn forecast_run(cfg: &RunConfig, ckpt: &Checkpoint, out_dir: &Path) -> Result<Tensor> {
    let state = &ckpt.state;
    let prep = prepare_for(cfg, state)?;
    let (t_in, t_out, n) = (state.model.t_in, state.model.t_out, state.model.nodes);
    let raw = &prep.dataset.raw;
    let start = raw.rows() - t_in;
    let x = (start..raw.rows()).flat_map(|t| (0..n).map(move |j| (t, j))).map(|(t, j)| state.norm.normalize(j, raw.get(t, j))).collect();
    let windows = Windows { count: 1, t_in, t_out, nodes: n, x, y: vec![0.0; t_out * n] };
    let values = denormalize(&predict(state, &windows, prep.predefined.as_ref())?, &state.norm);
    let table = Tensor::new(t_out, n, values)?;
    let names: Vec<String> = std::iter::once("horizon".to_string()).chain((0..n).map(|j| format!("node_{j}"))).collect();
    let lines = std::iter::once(names.join(","))
        .chain((0..t_out).map(|h| format!("{},{}", h + 1, csv_row(table.row(h)))));
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    write_lines(&out_dir.join("forecast.csv"), &provenance(&ckpt.config.hash(), ckpt.config.seed), lines)?;
    Ok(table)
}

/// Writes the learned logits and the top-C inference graph.
pub fn export_graph(ckpt: &Checkpoint, out_dir: &Path) -> Result<(Tensor, Tensor)> {
    let m = &ckpt.state.model;
    let logits = ckpt
        .state
        .params
        .get(GRAPH_LOGITS)
        .ok_or_else(|| Error::Config(format!("the checkpoint has no learned graph ({})", m.label())))?
        .clone();
    let topc = topc_inference(&logits, m.samples, m.allow_self_loops)?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let header = provenance(&ckpt.config.hash(), ckpt.config.seed);
    write_matrix(&out_dir.join("graph_logits.csv"), &header, None, &logits)?;
    write_matrix(&out_dir.join("graph_topc.csv"), &header, None, &topc)?;
    Ok((logits, topc))
}

/// Per-node attention over the channels, averaged over the windows of
/// `split`, into `attention.csv`.
pub fn export_attention(cfg: &RunConfig, ckpt: &Checkpoint, split: Split, out_dir: &Path) -> Result<Tensor> {
    let state = &ckpt.state;
    let m = &state.model;
    if !m.attends() {
        return Err(Error::Config(format!("the checkpoint has no attention ({})", m.label())));
    }
    let prep = prepare_for(cfg, state)?;
    let windows = prep.windows(split)?;
    let model = state.model()?;
    let n = m.nodes;
    let k = m.channels();
    let mut sum = Tensor::zeros(n, k);
    let all: Vec<usize> = (0..windows.count).collect();
    for chunk in all.chunks(64) {
        let (x, _) = windows.gather(chunk);
        let mut tape = Tape::new();
        let vars = relgraph_core::Model::bind(&mut tape, &state.params, false);
        let fwd = model.forward(&mut tape, &state.params, &vars, &x, prep.predefined.as_ref(), Mode::Inference)?;
        let att = tape.value(fwd.attention.expect("attending models return attention"));
        for r in 0..att.rows() {
            for c in 0..k {
                sum.set(r % n, c, sum.get(r % n, c) + att.get(r, c));
            }
        }
    }
    let mean = Tensor::from_fn(n, k, |i, c| sum.get(i, c) / windows.count as f64);
    let mut names = vec![CHANNEL_NAMES[0]];
    if m.implicit_channel() {
        names.push(CHANNEL_NAMES[1]);
    }
    if m.predefined_channel() {
        names.push(CHANNEL_NAMES[2]);
    }
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    write_matrix(&out_dir.join("attention.csv"), &provenance(&ckpt.config.hash(), ckpt.config.seed), Some(&names), &mean)?;
    Ok(mean)
}

/// Writes `series.csv`, `truth.csv` (0/1, `truth[i][j] = 1` when j drives
/// i), and `weights.csv`.
pub fn gen_synthetic_run(cfg: &SyntheticConfig, out_dir: &Path) -> Result<()> {
    let data = gen_synthetic(&cfg.spec)?;
    let n = cfg.spec.nodes;
    let header = provenance(&cfg.hash(), cfg.spec.seed);
    let truth = Tensor::from_fn(n, n, |i, j| if data.truth[i * n + j] { 1.0 } else { 0.0 });
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    write_matrix(&out_dir.join("series.csv"), &header, None, &data.series)?;
    write_matrix(&out_dir.join("truth.csv"), &header, None, &truth)?;
    write_matrix(&out_dir.join("weights.csv"), &header, None, &data.weights)?;
    Ok(())
}
