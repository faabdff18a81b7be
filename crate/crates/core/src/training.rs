//! Losses, Adam and the epoch loop.
//!
//! Each window gets its own tape. The batch loss is built on a separate small
//! tape whose leaves are the windows' predictions; its gradients seed the
//! per-window backward passes, and parameter gradients are summed in window
//! order so runs are reproducible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::dataset::Panel;
use crate::metrics::{self, DEFAULT_THRESHOLD};
use crate::model::{flatten_window, GatModel, GraphContext, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid loss config: {0}")]
    InvalidLoss(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    WeightedF1,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Recall weight in Fβ.
    pub beta: f64,
    /// One weight per station, broadcast over horizon days.
    pub station_weights: Vec<f64>,
    pub smoothing_eps: f64,
}

impl LossConfig {
    pub fn weighted_f1(station_weights: Vec<f64>) -> Self {
        Self {
            kind: LossKind::WeightedF1,
            beta: 1.0,
            station_weights,
            smoothing_eps: 1e-7,
        }
    }

    pub fn bce(n_stations: usize) -> Self {
        Self {
            kind: LossKind::Bce,
            beta: 1.0,
            station_weights: vec![1.0; n_stations],
            smoothing_eps: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(TrainError::InvalidLoss(format!("beta {} must be finite and >= 0", self.beta)));
        }
        if !(self.smoothing_eps > 0.0 && self.smoothing_eps < 0.5) {
            return Err(TrainError::InvalidLoss(format!("smoothing_eps {}", self.smoothing_eps)));
        }
        if self.station_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(TrainError::InvalidLoss("station weights must be positive".into()));
        }
        Ok(())
    }
}

/// Probability-weighted confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

/// `tp = Σ w_i y ŷ`, `fp = Σ w_i (1−y) ŷ`, `fn = Σ w_i y (1−ŷ)` over arrays
/// laid out `[c_out, N]`.
pub fn weighted_counts(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<SoftCounts, TrainError> {
    let n = w.len();
    if y.len() != y_hat.len() || n == 0 || !y.len().is_multiple_of(n) {
        return Err(TrainError::ShapeMismatch(format!(
            "{} targets, {} predictions, {} station weights",
            y.len(),
            y_hat.len(),
            n
        )));
    }
    let mut c = SoftCounts::default();
    for (k, (&t, &p)) in y.iter().zip(y_hat).enumerate() {
        let wi = w[k % n];
        c.tp += wi * t * p;
        c.fp += wi * (1.0 - t) * p;
        c.fn_ += wi * t * (1.0 - p);
    }
    Ok(c)
}

/// `1 − (1+β²)tp / ((1+β²)tp + β²fn + fp + eps)`.
pub fn weighted_f1_loss(c: &SoftCounts, beta: f64, eps: f64) -> f64 {
    let b2 = beta * beta;
    let num = (1.0 + b2) * c.tp;
    1.0 - num / (num + b2 * c.fn_ + c.fp + eps)
}

/// Mean binary cross-entropy with predictions clipped to `[eps, 1 − eps]`.
pub fn bce_loss(y: &[f64], y_hat: &[f64], eps: f64) -> f64 {
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&t, &p)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p))
        })
        .sum();
    total / y.len() as f64
}

/// Loss of pooled predictions, as evaluated outside any tape.
pub fn pooled_loss(cfg: &LossConfig, y: &[f64], y_hat: &[f64]) -> Result<f64, TrainError> {
    match cfg.kind {
        LossKind::WeightedF1 => {
            let c = weighted_counts(y, y_hat, &cfg.station_weights)?;
            Ok(weighted_f1_loss(&c, cfg.beta, cfg.smoothing_eps))
        }
        LossKind::Bce => Ok(bce_loss(y, y_hat, cfg.smoothing_eps)),
    }
}

/// Records the batch loss over predictions `preds[b]` (each `c_out × N`)
/// with targets `targets[b]`.
pub fn loss_on_tape(tape: &mut Tape, preds: &[Var], targets: &[Tensor], cfg: &LossConfig) -> Result<Var, TrainError> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} predictions, {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = cfg.station_weights.len();
    match cfg.kind {
        LossKind::WeightedF1 => {
            let mut tp: Option<Var> = None;
            let mut fp: Option<Var> = None;
            let mut pos = 0.0;
            for (&p, y) in preds.iter().zip(targets) {
                if y.len() % n != 0 {
                    return Err(TrainError::ShapeMismatch(format!("{} targets for {} stations", y.len(), n)));
                }
                let yw: Vec<f64> = y.data().iter().enumerate().map(|(k, t)| cfg.station_weights[k % n] * t).collect();
                let nw: Vec<f64> = y
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, t)| cfg.station_weights[k % n] * (1.0 - t))
                    .collect();
                pos += yw.iter().sum::<f64>();
                let ywv = tape.constant(Tensor::new(y.shape().to_vec(), yw));
                let nwv = tape.constant(Tensor::new(y.shape().to_vec(), nw));
                let a = tape.mul(p, ywv)?;
                let a = tape.sum(a);
                let b = tape.mul(p, nwv)?;
                let b = tape.sum(b);
                tp = Some(match tp {
                    Some(t) => tape.add(t, a)?,
                    None => a,
                });
                fp = Some(match fp {
                    Some(f) => tape.add(f, b)?,
                    None => b,
                });
            }
            let (tp, fp) = (tp.unwrap(), fp.unwrap());
            let b2 = cfg.beta * cfg.beta;
            let neg_tp = tape.scale(tp, -1.0);
            let fn_ = tape.add_scalar(neg_tp, pos);
            let num = tape.scale(tp, 1.0 + b2);
            let fn_term = tape.scale(fn_, b2);
            let den = tape.add(num, fn_term)?;
            let den = tape.add(den, fp)?;
            let den = tape.add_scalar(den, cfg.smoothing_eps);
            let f = tape.div(num, den)?;
            let neg_f = tape.scale(f, -1.0);
            Ok(tape.add_scalar(neg_f, 1.0))
        }
        LossKind::Bce => {
            let eps = cfg.smoothing_eps;
            let mut total: Option<Var> = None;
            let mut count = 0usize;
            for (&p, y) in preds.iter().zip(targets) {
                let c = tape.clamp(p, eps, 1.0 - eps);
                let log_p = tape.log(c);
                let neg_c = tape.scale(c, -1.0);
                let one_minus = tape.add_scalar(neg_c, 1.0);
                let log_q = tape.log(one_minus);
                let yv = tape.constant(y.clone());
                let not_y = tape.constant(y.map(|t| 1.0 - t));
                let a = tape.mul(yv, log_p)?;
                let b = tape.mul(not_y, log_q)?;
                let s = tape.add(a, b)?;
                let s = tape.sum(s);
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
                count += y.len();
            }
            Ok(tape.scale(total.unwrap(), -1.0 / count as f64))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update. Nothing changes if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String]) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TrainError::ShapeMismatch(format!(
                    "param {i} is {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("param {i}"));
                return Err(TrainError::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= learning_rate * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 64,
            patience: 10,
            min_delta: 1e-4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ba: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based, matching [`EpochRecord::epoch`].
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Pooled targets and probabilities for a set of windows, each laid out
/// `[c_out, N]` and concatenated in anchor order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub y: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn predict_windows(
    model: &GatModel,
    panel: &Panel,
    anchors: &[usize],
    ctx: &GraphContext,
) -> Result<Predictions, ModelError> {
    let cfg = &model.config;
    let mut out = Predictions::default();
    for &a in anchors {
        let w = panel.window(a, cfg.c_in, cfg.c_out);
        let x = flatten_window(&w.x, cfg.c_in, w.n_stations, w.n_features);
        let p = model.predict(x, ctx)?;
        out.y.extend_from_slice(&w.y);
        out.p.extend_from_slice(p.data());
    }
    Ok(out)
}

/// Loss and summed parameter gradients over one batch of windows.
pub fn batch_gradients(
    model: &GatModel,
    panel: &Panel,
    anchors: &[usize],
    ctx: &GraphContext,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let cfg = &model.config;
    let mut tapes = Vec::with_capacity(anchors.len());
    for &a in anchors {
        let w = panel.window(a, cfg.c_in, cfg.c_out);
        let x = flatten_window(&w.x, cfg.c_in, w.n_stations, w.n_features);
        let mut tape = Tape::new();
        let vars = model.load_params(&mut tape);
        let out = model.forward_on_tape(&mut tape, &vars, x, ctx)?;
        let target = Tensor::matrix(cfg.c_out, w.n_stations, w.y);
        tapes.push((tape, vars, out, target));
    }
    let mut loss_tape = Tape::new();
    let preds: Vec<Var> = tapes.iter().map(|(t, _, o, _)| loss_tape.param(t.value(*o).clone())).collect();
    let targets: Vec<Tensor> = tapes.iter().map(|(_, _, _, y)| y.clone()).collect();
    let loss = loss_on_tape(&mut loss_tape, &preds, &targets, loss_cfg)?;
    let loss_value = loss_tape.value(loss).item();
    let loss_grads = loss_tape.backward(loss)?;

    let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for ((tape, vars, out, _), &pv) in tapes.iter().zip(&preds) {
        let seed = loss_grads.wrt(pv);
        let g = tape.backward_with_seed(*out, &seed)?;
        for (acc, v) in grads.iter_mut().zip(vars) {
            if let Some(gv) = g.get(*v) {
                acc.add_assign(gv);
            }
        }
    }
    Ok((loss_value, grads))
}

/// Trains with Adam and early stopping on pooled validation loss. Returns the
/// parameters from the epoch with the lowest validation loss.
pub fn train(
    mut model: GatModel,
    panel: &Panel,
    train_anchors: &[usize],
    val_anchors: &[usize],
    ctx: &GraphContext,
    loss_cfg: &LossConfig,
    adam: AdamConfig,
    schedule: &Schedule,
) -> Result<(GatModel, TrainReport), TrainError> {
    if train_anchors.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_anchors.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    loss_cfg.validate()?;
    if loss_cfg.station_weights.len() != panel.n_stations() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} station weights for {} stations",
            loss_cfg.station_weights.len(),
            panel.n_stations()
        )));
    }
    let batch = schedule.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut state = AdamState::new(adam, &model.params);
    let mut order = train_anchors.to_vec();
    let mut epochs = Vec::new();
    let mut best_params = model.params.clone();
    let mut best = (0usize, f64::INFINITY);
    let mut reference = f64::INFINITY;
    let mut wait = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=schedule.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let (loss, grads) = batch_gradients(&model, panel, chunk, ctx, loss_cfg)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            state.step(&mut model.params, &grads, &model.names)?;
        }
        let train_loss = loss_sum / order.len() as f64;

        let preds = predict_windows(&model, panel, val_anchors, ctx)?;
        let val_loss = pooled_loss(loss_cfg, &preds.y, &preds.p)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let counts = metrics::confusion(&preds.y, &preds.p, DEFAULT_THRESHOLD).expect("non-empty validation set");
        let m = metrics::scalar_metrics(&counts);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_ba: m.balanced_accuracy,
            val_precision: m.precision,
            val_recall: m.recall,
            val_f1: m.f1,
            val_accuracy: m.accuracy,
        });
        log::info!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} ba {:.4} recall {:.4}",
            m.balanced_accuracy,
            m.recall
        );

        if val_loss < best.1 {
            best = (epoch, val_loss);
            best_params.clone_from(&model.params);
        }
        if val_loss < reference - schedule.min_delta {
            reference = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= schedule.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    model.params = best_params;
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch: best.0,
            best_val_loss: best.1,
            stop_reason,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_by_substitution() {
        let c = weighted_counts(&[1.0], &[0.7], &[2.0]).unwrap();
        assert!((c.tp - 1.4).abs() < 1e-15 && (c.fn_ - 0.6).abs() < 1e-15 && c.fp == 0.0);
        let z = weighted_counts(&[1.0, 0.0, 1.0, 1.0], &[0.0; 4], &[1.0, 3.0]).unwrap();
        assert_eq!((z.tp, z.fp, z.fn_), (0.0, 0.0, 5.0));
    }

    #[test]
    fn f1_loss_values() {
        let l = weighted_f1_loss(&SoftCounts { tp: 2.0, fp: 1.0, fn_: 1.0 }, 1.0, 0.0);
        assert!((l - 1.0 / 3.0).abs() < 1e-15);
        let perfect = weighted_f1_loss(&SoftCounts { tp: 5.0, fp: 0.0, fn_: 0.0 }, 1.0, 1e-7);
        assert!(perfect < 1e-6);
        assert_eq!(weighted_f1_loss(&SoftCounts { tp: 0.0, fp: 0.0, fn_: 3.0 }, 1.0, 1e-7), 1.0);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[1.0], &[0.5], 1e-7) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0], &[1.0 - 1e-7], 1e-7) < 1e-6);
    }

    #[test]
    fn tape_loss_matches_direct() {
        let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let p = [0.8, 0.3, 0.4, 0.1, 0.6, 0.9];
        let w = vec![1.5, 2.0, 1.2];
        for cfg in [LossConfig::weighted_f1(w.clone()), LossConfig::bce(3)] {
            let mut t = Tape::new();
            let pv = t.param(Tensor::matrix(2, 3, p.to_vec()));
            let l = loss_on_tape(&mut t, &[pv], &[Tensor::matrix(2, 3, y.to_vec())], &cfg).unwrap();
            let direct = pooled_loss(&cfg, &y, &p).unwrap();
            assert!((t.value(l).item() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::scalar(0.5)];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[Tensor::scalar(1.0)], &[]).unwrap();
        assert!((0.5 - p[0].item() - 0.001).abs() < 1e-10);
        assert_eq!(s.step, 1);

        let mut q = vec![Tensor::scalar(0.5)];
        let mut s = AdamState::new(AdamConfig::default(), &q);
        s.step(&mut q, &[Tensor::scalar(0.0)], &[]).unwrap();
        assert_eq!(q[0].item(), 0.5);
        let err = s.step(&mut q, &[Tensor::scalar(f64::NAN)], &["w".into()]).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient("w".into()));
        assert_eq!(s.step, 1);
    }
}
