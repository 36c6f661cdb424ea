//! The shared run configuration file.
//!
//! Every command reads the same TOML layout; unspecified keys keep their
//! defaults (desk scale, or paper scale with `--paper-scale`):
//!
//! ```toml
//! [link]        # channel, see kaneq::LinkConfig
//! [train]       # kaneq::training::TrainConfig, also used for retraining
//! [prune]
//! thresholds = [0.0, 1.25, 2.5, 5.0]
//! [campaign]
//! frames = 8
//! [deployment]
//! rop_step = 2.0
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use kaneq::pruning::{default_thresholds, PruneConfig};
use kaneq::search::{rop_grid, CampaignConfig, DeploymentConfig};
use kaneq::{LinkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub thresholds: Vec<f64>,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub frames: usize,
    pub symbols_per_frame: usize,
    pub seed: u64,
    /// Sampled CNN-2 and KAN-2 architectures in the desk subset.
    pub two_layer_each: usize,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            frames: 8,
            symbols_per_frame: 280_000,
            seed: 0,
            two_layer_each: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentSection {
    pub budgets: Vec<f64>,
    pub tolerance: f64,
    pub rop_min: f64,
    pub rop_max: f64,
    pub rop_step: f64,
    pub frames_per_rop: usize,
    pub symbols_per_frame: usize,
    pub seed: u64,
}

impl Default for DeploymentSection {
    fn default() -> Self {
        Self {
            budgets: vec![21.0, 51.0, 121.0, 321.0],
            tolerance: 0.1,
            rop_min: -30.0,
            rop_max: 2.0,
            rop_step: 2.0,
            frames_per_rop: 2,
            symbols_per_frame: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub link: LinkConfig,
    pub train: TrainConfig,
    pub prune: PruneSection,
    pub campaign: CampaignSection,
    pub deployment: DeploymentSection,
}

impl ConfigFile {
    pub fn paper_scale() -> Self {
        let mut cfg = Self {
            train: TrainConfig::paper_scale(),
            ..Self::default()
        };
        cfg.campaign.symbols_per_frame = 2_800_000;
        cfg.deployment.rop_step = 1.0;
        cfg.deployment.symbols_per_frame = 1_000_000;
        cfg
    }

    /// Defaults for the chosen scale, overlaid with the keys present in
    /// `path`.
    pub fn load(path: Option<&Path>, paper_scale: bool) -> Result<Self> {
        let base = if paper_scale { Self::paper_scale() } else { Self::default() };
        let Some(path) = path else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut merged = toml::Table::try_from(&base)?;
        merge(&mut merged, overlay);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .with_context(|| format!("invalid configuration in {}", path.display()))?;
        cfg.link.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(kaneq::io::sha256_hex(toml::to_string(self)?.as_bytes()))
    }

    pub fn prune_config(&self, lr: f64) -> PruneConfig {
        PruneConfig {
            thresholds: self.prune.thresholds.clone(),
            retrain: TrainConfig { lr, ..self.train.clone() },
        }
    }

    pub fn campaign_config(&self) -> CampaignConfig {
        CampaignConfig {
            link: self.link.clone(),
            frames: self.campaign.frames,
            symbols_per_frame: self.campaign.symbols_per_frame,
            train: self.train.clone(),
            prune: self.prune_config(self.train.lr),
            seed: self.campaign.seed,
        }
    }

    pub fn deployment_config(&self) -> DeploymentConfig {
        let d = &self.deployment;
        DeploymentConfig {
            link: self.link.clone(),
            budgets: d.budgets.clone(),
            tolerance: d.tolerance,
            rops: rop_grid(d.rop_min, d.rop_max, d.rop_step),
            frames_per_rop: d.frames_per_rop,
            symbols_per_frame: d.symbols_per_frame,
            seed: d.seed,
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_overrides_only_given_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[link]\nrop = -10.0\n[link.eam]\nslope = 2.0\n[train]\niterations = 10\n").unwrap();
        let cfg = ConfigFile::load(Some(&path), false).unwrap();
        assert_eq!(cfg.link.rop, -10.0);
        assert_eq!(cfg.link.eam.slope, 2.0);
        assert_eq!(cfg.link.eam.knee_voltage, LinkConfig::default().eam.knee_voltage);
        assert_eq!(cfg.train.iterations, 10);
        assert_eq!(cfg.train.block_symbols, 360);
    }

    #[test]
    fn paper_scale_survives_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlr = 1e-3\n").unwrap();
        let cfg = ConfigFile::load(Some(&path), true).unwrap();
        assert_eq!(cfg.train.iterations, 7600);
        assert_eq!(cfg.train.test_blocks, 200);
        assert_eq!(cfg.campaign.symbols_per_frame, 2_800_000);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlearning_rate = 1e-3\n").unwrap();
        assert!(ConfigFile::load(Some(&path), false).is_err());
    }
}
