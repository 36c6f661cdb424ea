//! Layer-wise relative-magnitude pruning followed by one retraining round.
//!
//! Connection magnitude is `|w|` for convolution weights and `sum_k |a_k|`
//! for a spline function. Within each layer a connection is removed iff its
//! magnitude is strictly below `threshold / 100` times the layer maximum.
//! Biases are never pruned.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equalizer::{EqualizerModel, LayerParams};
use crate::io::{fmt_f64, write_csv_rows};
use crate::training::{self, max_of, TrainConfig, TrainRecord};
use crate::{Error, Result, WaveformFrame};

/// `{0, 1.25, 2.5, 5, 10, 15, ..., 95}` percent.
pub fn default_thresholds() -> Vec<f64> {
    let mut t = vec![0.0, 1.25, 2.5];
    t.extend((1..=19).map(|i| 5.0 * i as f64));
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub thresholds: Vec<f64>,
    pub retrain: TrainConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            retrain: TrainConfig::default(),
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        for &t in &self.thresholds {
            check_threshold(t)?;
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("pruning thresholds must be strictly ascending"));
        }
        self.retrain.validate()
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..100.0).contains(&t) {
        return Err(Error::config(format!("pruning threshold {t} outside [0, 100)")));
    }
    Ok(())
}

/// Per-layer connection magnitudes, in mask order.
pub fn magnitude(model: &EqualizerModel) -> Vec<Vec<f64>> {
    model.layers().iter().map(layer_magnitude).collect()
}

fn layer_magnitude(layer: &LayerParams) -> Vec<f64> {
    let per = layer.params_per_connection();
    layer
        .weights()
        .chunks(per)
        .map(|c| c.iter().map(|a| a.abs()).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub model: EqualizerModel,
    /// Connections newly masked in each layer.
    pub pruned: Vec<usize>,
    /// Layers left without any active connection.
    pub empty_layers: Vec<usize>,
}

impl PruneOutcome {
    pub fn is_degenerate(&self) -> bool {
        !self.empty_layers.is_empty()
    }
}

pub fn prune(model: &EqualizerModel, threshold_pct: f64) -> Result<PruneOutcome> {
    check_threshold(threshold_pct)?;
    let mut model = model.clone();
    let mut pruned = Vec::new();
    let mut empty_layers = Vec::new();
    for (li, layer) in model.layers_mut().iter_mut().enumerate() {
        let mags = layer_magnitude(layer);
        let max = mags
            .iter()
            .zip(layer.mask())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(0.0, f64::max);
        let cutoff = threshold_pct / 100.0 * max;
        let mut count = 0;
        for (conn, &mag) in mags.iter().enumerate() {
            if layer.mask()[conn] && mag < cutoff {
                layer.prune_connection(conn);
                count += 1;
            }
        }
        pruned.push(count);
        if layer.active_connections() == 0 {
            empty_layers.push(li);
        }
    }
    Ok(PruneOutcome {
        model,
        pruned,
        empty_layers,
    })
}

/// One threshold of a prune-and-retrain sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub threshold: f64,
    /// One retrained model per frame; empty when the entry failed.
    pub models: Vec<EqualizerModel>,
    pub records: Vec<TrainRecord>,
    /// Maximum over frames (masks can differ per frame).
    pub rvms: f64,
    pub metric: f64,
    pub failure: Option<String>,
}

impl SweepEntry {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Prune each per-frame model at every threshold and retrain it on its
/// own frame, restarting the learning-rate schedule.
pub fn prune_and_retrain(
    models: &[EqualizerModel],
    frames: &[WaveformFrame],
    cfg: &PruneConfig,
) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    if models.len() != frames.len() || models.is_empty() {
        return Err(Error::contract("need exactly one trained model per frame"));
    }
    cfg.thresholds
        .par_iter()
        .map(|&threshold| sweep_entry(models, frames, threshold, &cfg.retrain))
        .collect()
}

fn sweep_entry(
    models: &[EqualizerModel],
    frames: &[WaveformFrame],
    threshold: f64,
    retrain: &TrainConfig,
) -> Result<SweepEntry> {
    let mut pruned = Vec::with_capacity(models.len());
    for model in models {
        let outcome = prune(model, threshold)?;
        if outcome.is_degenerate() {
            return Ok(SweepEntry {
                threshold,
                models: vec![],
                records: vec![],
                rvms: outcome.model.count_rvms().total,
                metric: f64::NAN,
                failure: Some(format!("layers {:?} pruned to zero connections", outcome.empty_layers)),
            });
        }
        pruned.push(outcome.model);
    }
    let mut records = Vec::with_capacity(frames.len());
    for (model, frame) in pruned.iter_mut().zip(frames) {
        records.push(training::train(model, frame, retrain)?);
    }
    Ok(SweepEntry {
        threshold,
        rvms: max_of(pruned.iter().map(|m| m.count_rvms().total)),
        metric: training::max_mean_ber(&records),
        models: pruned,
        records,
        failure: None,
    })
}

pub const SWEEP_HEADER: [&str; 4] = ["threshold", "rvms", "metric", "checkpoint"];

/// Writes the sweep CSV; `checkpoints[i]` is the saved model of entry `i`.
pub fn write_sweep_csv(path: &Path, entries: &[SweepEntry], checkpoints: &[Option<PathBuf>]) -> Result<()> {
    let rows = entries.iter().zip(checkpoints).map(|(e, ck)| {
        [
            fmt_f64(e.threshold),
            fmt_f64(e.rvms),
            fmt_f64(e.metric),
            ck.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        ]
    });
    write_csv_rows(path, &SWEEP_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equalizer::Architecture;
    use crate::seed;

    #[test]
    fn default_thresholds_follow_the_list() {
        let t = default_thresholds();
        assert_eq!(&t[..5], &[0.0, 1.25, 2.5, 5.0, 10.0]);
        assert_eq!(*t.last().unwrap(), 95.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        PruneConfig::default().validate().unwrap();
    }

    #[test]
    fn kan_magnitude_is_coefficient_abs_sum() {
        let mut model = EqualizerModel::new(Architecture::kan1(2, 5).unwrap(), &mut seed::rng(0)).unwrap();
        model.layers_mut()[0].weights_mut()[..5].copy_from_slice(&[1.0, -2.0, 0.0, 0.0, 1.0]);
        model.layers_mut()[0].weights_mut()[5..].fill(0.0);
        assert_eq!(magnitude(&model), vec![vec![4.0, 0.0]]);
    }

    #[test]
    fn relative_threshold_rule() {
        let mut model = EqualizerModel::new(Architecture::fir(3).unwrap(), &mut seed::rng(0)).unwrap();
        model.layers_mut()[0].weights_mut().copy_from_slice(&[1.0, -0.4, 0.05]);
        let out = prune(&model, 10.0).unwrap();
        assert_eq!(out.model.layers()[0].mask(), &[true, true, false]);
        assert_eq!(out.model.layers()[0].weights(), &[1.0, -0.4, 0.0]);
        // equality with the cutoff survives
        let out = prune(&model, 40.0).unwrap();
        assert_eq!(out.model.layers()[0].mask(), &[true, true, false]);
    }

    #[test]
    fn threshold_zero_is_identity() {
        let model = EqualizerModel::new(Architecture::kan2(2, 8, 2, 5, 8, 2, 9).unwrap(), &mut seed::rng(1)).unwrap();
        assert_eq!(prune(&model, 0.0).unwrap().model, model);
    }

    #[test]
    fn out_of_range_threshold_rejected() {
        let model = EqualizerModel::new(Architecture::fir(3).unwrap(), &mut seed::rng(0)).unwrap();
        assert!(matches!(prune(&model, 100.0), Err(Error::Config(_))));
        assert!(matches!(prune(&model, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn all_zero_layer_flagged() {
        let mut model = EqualizerModel::new(Architecture::fir(3).unwrap(), &mut seed::rng(0)).unwrap();
        model.layers_mut()[0].weights_mut().fill(0.0);
        // max is 0 so nothing is strictly below the cutoff
        assert!(!prune(&model, 50.0).unwrap().is_degenerate());
        for conn in 0..3 {
            model.layers_mut()[0].prune_connection(conn);
        }
        assert_eq!(prune(&model, 50.0).unwrap().empty_layers, vec![0]);
    }

    #[test]
    fn rvms_monotone_in_threshold() {
        let model = EqualizerModel::new(Architecture::cnn2(4, 16, 2, 8, 2).unwrap(), &mut seed::rng(2)).unwrap();
        let rvms: Vec<f64> = default_thresholds()
            .iter()
            .map(|&t| prune(&model, t).unwrap().model.count_rvms().total)
            .collect();
        assert!(rvms.windows(2).all(|w| w[1] <= w[0]), "{rvms:?}");
        assert!(rvms.last().unwrap() < &rvms[0]);
    }
}
