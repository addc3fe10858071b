//! Loss, training loop, prediction, and evaluation.

use alloc::boxed::Box;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Normalization, Windows};
use crate::error::{bail, Error, Result};
use crate::metrics::MetricReport;
use crate::model::{Mode, Model, ModelConfig, ParamStore};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Exclude targets whose original-scale value is exactly zero from the loss.
    pub mask_zeros: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, seed: 0, adam: AdamConfig::default(), mask_zeros: false }
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamStore,
    pub optimizer: AdamState,
    pub norm: Normalization,
    pub epoch: usize,
}

impl ModelState {
    pub fn init(model: ModelConfig, train: TrainConfig, norm: Normalization) -> Result<Self> {
        let m = Model::new(model.clone())?;
        let params = m.init(&mut stream(train.seed, Stream::Init));
        let optimizer = AdamState::new(&params);
        Ok(Self { model, train, params, optimizer, norm, epoch: 0 })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.model.clone())
    }
}

/// `sqrt(mean((ŷ − y)²))` over entries where `mask` is 1 (all entries when
/// `mask` is `None`).
pub fn rmse_loss(tape: &mut Tape, prediction: Var, target: &Tensor, mask: Option<&Tensor>) -> Result<Var> {
    if tape.value(prediction).shape() != target.shape() {
        bail!(Shape, "prediction {:?} vs target {:?}", tape.value(prediction).shape(), target.shape());
    }
    let y = tape.constant(target.clone());
    let diff = tape.sub(prediction, y)?;
    let sq = tape.mul(diff, diff)?;
    let (sq, count) = match mask {
        Some(m) => {
            let count = m.data().iter().filter(|&&v| v != 0.0).count();
            (tape.mul_const(sq, m.clone())?, count)
        }
        None => (sq, target.len()),
    };
    if count == 0 {
        bail!(InvalidArgument, "every loss entry is masked");
    }
    let total = tape.sum(sq);
    let mean = tape.scale(total, 1.0 / count as f64);
    Ok(tape.sqrt(mean))
}

/// Mask of targets (rows ordered (window, node)) whose de-normalised value
/// is non-zero.
pub fn nonzero_mask(target: &Tensor, norm: &Normalization) -> Tensor {
    let n = norm.mean.len();
    Tensor::from_fn(target.rows(), target.cols(), |r, c| {
        if norm.denormalize(r % n, target.get(r, c)) == 0.0 { 0.0 } else { 1.0 }
    })
}

/// Windowed splits plus the graph side input.
pub struct TrainingData<'a> {
    pub train: &'a Windows,
    pub valid: &'a Windows,
    /// Row-normalised pre-defined adjacency.
    pub predefined: Option<&'a Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid: MetricReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: ModelState,
    pub last: ModelState,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: Error, last_good: Box<ModelState> },
}

/// One optimisation step on the windows `picks`; returns the batch loss.
pub fn train_step(
    state: &mut ModelState,
    model: &Model,
    windows: &Windows,
    picks: &[usize],
    predefined: Option<&Tensor>,
    gumbel: &mut crate::rng::StreamRng,
    dropout: &mut crate::rng::StreamRng,
) -> Result<f64> {
    let (x, y) = windows.gather(picks);
    let mask = state.train.mask_zeros.then(|| nonzero_mask(&y, &state.norm));
    let mut tape = Tape::new();
    let vars = Model::bind(&mut tape, &state.params, true);
    let out = model.forward(&mut tape, &state.params, &vars, &x, predefined, Mode::Training { gumbel, dropout })?;
    let loss = rmse_loss(&mut tape, out.prediction, &y, mask.as_ref())?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        bail!(NonFinite, "loss is {value}");
    }
    tape.backward(loss)?;
    let mut grads: Vec<Tensor> = vars
        .iter()
        .zip(state.params.iter())
        .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols())))
        .collect();
    adam_step(&state.train.adam, &mut state.optimizer, &mut state.params, &mut grads)?;
    Ok(value)
}

/// Trains from a fresh initialisation. `on_epoch` sees every epoch's record
/// and the state after it.
pub fn train(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    norm: Normalization,
    data: &TrainingData,
    on_epoch: impl FnMut(&EpochRecord, &ModelState),
) -> Result<TrainOutcome, TrainError> {
    let state = ModelState::init(model_cfg, cfg, norm)?;
    resume(state, data, on_epoch)
}

/// Continues training `state` for its remaining epochs.
pub fn resume(
    mut state: ModelState,
    data: &TrainingData,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelState),
) -> Result<TrainOutcome, TrainError> {
    let model = state.model()?;
    let cfg = state.train.clone();
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()).into());
    }
    if data.train.count == 0 || data.valid.count == 0 {
        return Err(Error::InsufficientData("training and validation need at least one window".into()).into());
    }
    // Streams are positioned by epoch so a resumed run matches an
    // uninterrupted one.
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut gumbel = stream(cfg.seed, Stream::Gumbel);
    let mut dropout = stream(cfg.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..data.train.count).collect();
    for _ in 0..state.epoch {
        order.shuffle(&mut shuffle);
    }
    seek_epoch(&mut gumbel, state.epoch);
    seek_epoch(&mut dropout, state.epoch);

    let mut history = Vec::new();
    let mut best: Option<(f64, ModelState)> = None;
    let mut last_good = state.clone();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for picks in order.chunks(cfg.batch_size) {
            match train_step(&mut state, &model, data.train, picks, data.predefined, &mut gumbel, &mut dropout) {
                Ok(l) => {
                    loss_sum += l;
                    batches += 1;
                }
                Err(reason) => {
                    return Err(TrainError::Diverged { epoch, reason, last_good: Box::new(last_good) });
                }
            }
        }
        state.epoch = epoch;
        seek_epoch(&mut gumbel, epoch);
        seek_epoch(&mut dropout, epoch);

        let (valid, valid_loss) = evaluate_with_loss(&state, data.valid, data.predefined)?;
        if !valid_loss.is_finite() {
            let reason = Error::NonFinite(alloc::format!("validation loss is {valid_loss}"));
            return Err(TrainError::Diverged { epoch, reason, last_good: Box::new(last_good) });
        }
        let record = EpochRecord { epoch, train_loss: loss_sum / batches as f64, valid_loss, valid };
        on_epoch(&record, &state);
        if best.as_ref().map_or(true, |(l, _)| valid_loss < *l) {
            best = Some((valid_loss, state.clone()));
        }
        history.push(record);
        last_good = state.clone();
    }
    let best = best.map(|(_, s)| s).unwrap_or_else(|| state.clone());
    Ok(TrainOutcome { best, last: state, history })
}

fn seek_epoch(rng: &mut crate::rng::StreamRng, epoch: usize) {
    rng.set_word_pos(epoch as u128 * (1 << 40));
}

/// Inference-mode forecasts for every window, `[B × t_out × N]`, on the
/// normalised scale.
pub fn predict(state: &ModelState, windows: &Windows, predefined: Option<&Tensor>) -> Result<Vec<f64>> {
    let model = state.model()?;
    let (n, t_out) = (windows.nodes, windows.t_out);
    let mut out = alloc::vec![0.0; windows.count * t_out * n];
    let all: Vec<usize> = (0..windows.count).collect();
    for chunk in all.chunks(64) {
        let (x, _) = windows.gather(chunk);
        let mut tape = Tape::new();
        let vars = Model::bind(&mut tape, &state.params, false);
        let fwd = model.forward(&mut tape, &state.params, &vars, &x, predefined, Mode::Inference)?;
        let pred = tape.value(fwd.prediction);
        for (k, &b) in chunk.iter().enumerate() {
            for node in 0..n {
                for h in 0..t_out {
                    out[(b * t_out + h) * n + node] = pred.get(k * n + node, h);
                }
            }
        }
    }
    Ok(out)
}

pub fn denormalize(values: &[f64], norm: &Normalization) -> Vec<f64> {
    let n = norm.mean.len();
    values.iter().enumerate().map(|(k, &v)| norm.denormalize(k % n, v)).collect()
}

/// Metrics on the original scale.
pub fn evaluate(state: &ModelState, windows: &Windows, predefined: Option<&Tensor>) -> Result<MetricReport> {
    Ok(evaluate_with_loss(state, windows, predefined)?.0)
}

fn evaluate_with_loss(state: &ModelState, windows: &Windows, predefined: Option<&Tensor>) -> Result<(MetricReport, f64)> {
    if windows.count == 0 {
        bail!(InsufficientData, "cannot evaluate an empty split");
    }
    let pred = predict(state, windows, predefined)?;
    let sq: f64 = pred.iter().zip(&windows.y).map(|(a, b)| (a - b) * (a - b)).sum();
    let loss = num_traits::Float::sqrt(sq / pred.len() as f64);
    let y = denormalize(&windows.y, &state.norm);
    let yhat = denormalize(&pred, &state.norm);
    Ok((MetricReport::compute(&y, &yhat, windows.t_out, windows.nodes), loss))
}
