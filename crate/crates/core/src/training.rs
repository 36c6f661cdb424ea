//! Block-streaming training: MSE + L1 objective, Adam updates, plateau LR
//! schedule, and test BER on a held-out tail of the frame.
//!
//! A frame's usable symbols are split into a training region followed by
//! `test_blocks * block_symbols` test symbols. Iteration `i` trains on the
//! `i`-th training block (wrapping around when the region is exhausted),
//! fed together with its receptive-field context.

use std::collections::VecDeque;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equalizer::{Architecture, EqualizerModel, Gradients};
use crate::io::{fmt_f64, write_csv_rows};
use crate::{pam4, seed, Error, Result, WaveformFrame};

pub const LR_GRID: [f64; 4] = [1e-3, 1.77e-3, 3.16e-3, 5.62e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub block_symbols: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub l1_weight: f64,
    pub test_blocks: usize,
    /// Iterations averaged for the final test BER.
    pub ber_avg_window: usize,
    pub plateau_patience: usize,
    /// Moving-average length of the training loss seen by the scheduler.
    pub plateau_smoothing: usize,
    /// Relative improvement that resets the patience counter.
    pub plateau_threshold: f64,
    pub min_lr: f64,
    /// Evaluate test BER every this many iterations (always during the
    /// final averaging window). Evaluation does not affect training.
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            block_symbols: 360,
            iterations: 1500,
            lr: 3.16e-3,
            lr_factor: 0.4,
            l1_weight: 5e-3,
            test_blocks: 50,
            ber_avg_window: 10,
            plateau_patience: 200,
            plateau_smoothing: 50,
            plateau_threshold: 1e-3,
            min_lr: 1e-5,
            eval_interval: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        Self {
            iterations: 7600,
            test_blocks: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.block_symbols, self.iterations, self.ber_avg_window, self.eval_interval];
        if positive.contains(&0) {
            return Err(Error::config(
                "block_symbols, iterations, ber_avg_window and eval_interval must be positive",
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be a non-negative number"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::config("lr_factor must lie in (0, 1)"));
        }
        if self.l1_weight.is_nan() || self.l1_weight < 0.0 {
            return Err(Error::config("l1_weight must be non-negative"));
        }
        Ok(())
    }
}

/// Per-iteration history of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    /// MSE + L1 objective of each training block.
    pub loss: Vec<f64>,
    /// Test BER; `None` where evaluation was skipped.
    pub test_ber: Vec<Option<f64>>,
    pub lr: Vec<f64>,
    /// Mean test BER over the last `ber_avg_window` iterations.
    pub final_mean_ber: f64,
}

pub const TRAIN_RECORD_HEADER: [&str; 4] = ["iteration", "loss", "test_ber", "lr"];

impl TrainRecord {
    pub fn iterations(&self) -> usize {
        self.loss.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.loss.len()).map(|i| {
            [
                i.to_string(),
                fmt_f64(self.loss[i]),
                self.test_ber[i].map(fmt_f64).unwrap_or_default(),
                fmt_f64(self.lr[i]),
            ]
        });
        write_csv_rows(path, &TRAIN_RECORD_HEADER, rows)
    }
}

/// `(mean (e - t)^2, 2 (e - t) / N)`.
pub fn mse_loss(estimates: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(estimates.len(), targets.len(), "estimate/target length mismatch");
    let n = estimates.len() as f64;
    let mut loss = 0.0;
    let grads = estimates
        .iter()
        .zip(targets)
        .map(|(e, t)| {
            let d = e - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grads)
}

/// `l1_weight * sum |theta|` over unmasked weights and spline coefficients
/// (not biases), with subgradient `l1_weight * sign(theta)`, 0 at 0.
pub fn l1_penalty(model: &EqualizerModel, l1_weight: f64) -> (f64, Gradients) {
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    for (layer, g) in model.layers().iter().zip(grads.iter_mut()) {
        let per = layer.params_per_connection();
        for (conn, &active) in layer.mask().iter().enumerate() {
            if !active {
                continue;
            }
            let range = conn * per..(conn + 1) * per;
            for (w, gw) in layer.weights()[range.clone()].iter().zip(&mut g.weights[range]) {
                total += w.abs();
                *gw = if *w > 0.0 {
                    l1_weight
                } else if *w < 0.0 {
                    -l1_weight
                } else {
                    0.0
                };
            }
        }
    }
    (l1_weight * total, grads)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &EqualizerModel) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
        }
    }

    pub fn step(&mut self, model: &mut EqualizerModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            let g = &grads[li];
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            };
            update(layer.weights_mut(), &g.weights, &mut self.m[li].weights, &mut self.v[li].weights);
            update(layer.bias_mut(), &g.bias, &mut self.m[li].bias, &mut self.v[li].bias);
        }
    }
}

/// Reduce-on-plateau on the moving average of the training loss.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    min_lr: f64,
    patience: usize,
    threshold: f64,
    smoothing: usize,
    history: VecDeque<f64>,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            factor: cfg.lr_factor,
            min_lr: cfg.min_lr,
            patience: cfg.plateau_patience.max(1),
            threshold: cfg.plateau_threshold,
            smoothing: cfg.plateau_smoothing.max(1),
            history: VecDeque::new(),
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, loss: f64) {
        if self.history.len() == self.smoothing {
            self.history.pop_front();
        }
        self.history.push_back(loss);
        let smoothed = self.history.iter().sum::<f64>() / self.history.len() as f64;
        if smoothed < self.best * (1.0 - self.threshold) {
            self.best = smoothed;
            self.stale = 0;
            return;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            let next = self.lr * self.factor;
            if next >= self.min_lr {
                self.lr = next;
            }
            self.best = smoothed;
            self.stale = 0;
        }
    }
}

/// Training and test symbol ranges of a frame for a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl DataSplit {
    pub fn new(arch: &Architecture, n_symbols: usize, cfg: &TrainConfig) -> Result<Self> {
        let usable = arch.usable_symbols(n_symbols);
        let test_len = cfg.test_blocks * cfg.block_symbols;
        if usable.len() < test_len + cfg.block_symbols {
            return Err(Error::contract(format!(
                "frame of {n_symbols} symbols has {} usable symbols, need at least {} \
                 ({} test blocks + 1 training block of {})",
                usable.len(),
                test_len + cfg.block_symbols,
                cfg.test_blocks,
                cfg.block_symbols
            )));
        }
        let split = usable.end - test_len;
        Ok(Self {
            train: usable.start..split,
            test: split..usable.end,
        })
    }

    pub fn train_blocks(&self, block: usize) -> usize {
        self.train.len() / block
    }
}

pub fn targets(symbols: &[u8]) -> Vec<f64> {
    symbols.iter().map(|&s| pam4::level(s)).collect()
}

/// Hard-decision BER of the model on `region` (symbol indices).
pub fn evaluate_ber(model: &EqualizerModel, frame: &WaveformFrame, region: Range<usize>) -> Result<f64> {
    let samples = frame.samples_f64();
    evaluate_ber_on(model, &samples, &frame.symbols, region)
}

pub fn evaluate_ber_on(
    model: &EqualizerModel,
    samples: &[f64],
    symbols: &[u8],
    region: Range<usize>,
) -> Result<f64> {
    if region.end > symbols.len() || region.is_empty() {
        return Err(Error::contract("evaluation region outside the frame"));
    }
    let est = model.estimate(samples, region.start, region.len())?;
    let (errors, bits) = pam4::count_bit_errors(&est, &symbols[region]);
    Ok(errors as f64 / bits as f64)
}

/// Mean squared error of the model on `region`.
pub fn evaluate_mse(model: &EqualizerModel, frame: &WaveformFrame, region: Range<usize>) -> Result<f64> {
    let samples = frame.samples_f64();
    let est = model.estimate(&samples, region.start, region.len())?;
    Ok(mse_loss(&est, &targets(&frame.symbols[region])).0)
}

pub fn train(model: &mut EqualizerModel, frame: &WaveformFrame, cfg: &TrainConfig) -> Result<TrainRecord> {
    cfg.validate()?;
    let split = DataSplit::new(model.architecture(), frame.len(), cfg)?;
    let samples = frame.samples_f64();
    let all_targets = targets(&frame.symbols);
    let block = cfg.block_symbols;
    let n_blocks = split.train_blocks(block);

    let mut adam = Adam::new(model);
    let mut sched = PlateauScheduler::new(cfg);
    let mut record = TrainRecord {
        loss: Vec::with_capacity(cfg.iterations),
        test_ber: Vec::with_capacity(cfg.iterations),
        lr: Vec::with_capacity(cfg.iterations),
        final_mean_ber: f64::NAN,
    };
    let window_start = cfg.iterations.saturating_sub(cfg.ber_avg_window);

    for it in 0..cfg.iterations {
        let first = split.train.start + (it % n_blocks) * block;
        let w = model.architecture().window(first, block, samples.len())?;
        let cache = model.forward_cached(&samples[w.sample_start..w.sample_start + w.sample_len])?;
        let est = &cache.output()[w.skip..w.skip + block];
        let (mse, g) = mse_loss(est, &all_targets[first..first + block]);
        let mut upstream = vec![0.0; cache.output().len()];
        upstream[w.skip..w.skip + block].copy_from_slice(&g);
        let mut grads = model.backward(&cache, &upstream)?;
        let (penalty, l1_grads) = l1_penalty(model, cfg.l1_weight);
        for (g, l) in grads.iter_mut().zip(&l1_grads) {
            g.weights.iter_mut().zip(&l.weights).for_each(|(a, b)| *a += b);
        }
        let objective = mse + penalty;
        let lr = sched.lr();
        adam.step(model, &grads, lr);
        sched.observe(objective);

        let evaluate = (it + 1) % cfg.eval_interval == 0 || it >= window_start;
        let ber = if evaluate {
            Some(evaluate_ber_on(model, &samples, &frame.symbols, split.test.clone())?)
        } else {
            None
        };
        record.loss.push(objective);
        record.test_ber.push(ber);
        record.lr.push(lr);
    }
    record.final_mean_ber = mean_of_last(&record.test_ber, cfg.ber_avg_window);
    Ok(record)
}

fn mean_of_last(values: &[Option<f64>], window: usize) -> f64 {
    let tail: Vec<f64> = values[values.len().saturating_sub(window)..]
        .iter()
        .flatten()
        .copied()
        .collect();
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Maximum over runs of each run's final mean test BER.
pub fn max_mean_ber(records: &[TrainRecord]) -> f64 {
    max_of(records.iter().map(|r| r.final_mean_ber))
}

pub fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Seed for the model trained on frame `index` of a run.
pub fn init_seed(cfg: &TrainConfig, index: usize) -> u64 {
    seed::derive_seed(cfg.seed, &format!("init-{index}"))
}

/// Initialize and train one model per frame, in parallel.
pub fn train_on_frames(
    arch: &Architecture,
    frames: &[WaveformFrame],
    cfg: &TrainConfig,
) -> Result<Vec<(EqualizerModel, TrainRecord)>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let mut model = EqualizerModel::new(arch.clone(), &mut seed::rng(init_seed(cfg, i)))?;
            let record = train(&mut model, frame, cfg)?;
            Ok((model, record))
        })
        .collect()
}
