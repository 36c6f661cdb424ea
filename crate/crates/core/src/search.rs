//! Hyperparameter grid, campaign orchestration, Pareto fronts over
//! (rvms, max mean BER), and deployment sweeps over received power.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::build_frame;
use crate::equalizer::{Architecture, EqualizerModel, Family};
use crate::io::{fmt_f64, sha256_hex, write_csv_rows};
use crate::pruning::{self, PruneConfig};
use crate::training::{self, evaluate_ber_on, TrainConfig, LR_GRID};
use crate::{seed, Error, LinkConfig, Result, WaveformFrame};

/// Cross-product grid per equalizer family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub families: Vec<Family>,
    /// FIR and KAN-1 tap counts.
    pub taps: Vec<usize>,
    pub kan1_grid: usize,
    pub c1: Vec<usize>,
    pub k1: Vec<usize>,
    pub s1: Vec<usize>,
    pub k2: Vec<usize>,
    pub s2: Vec<usize>,
    /// Chosen independently for each KAN-2 layer.
    pub grids: Vec<usize>,
    pub lrs: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::table1()
    }
}

impl SearchSpace {
    pub fn table1() -> Self {
        Self {
            families: vec![Family::Fir, Family::Kan1, Family::Cnn2, Family::Kan2],
            taps: vec![21, 51, 121, 321],
            kan1_grid: 17,
            c1: vec![2, 4, 8],
            k1: vec![8, 32, 64],
            s1: vec![1, 2, 4],
            k2: vec![8, 32, 64],
            s2: vec![2, 4, 8],
            grids: vec![5, 9],
            lrs: LR_GRID.to_vec(),
        }
    }

    pub fn empty() -> Self {
        Self {
            families: vec![],
            ..Self::table1()
        }
    }

    pub fn only(family: Family) -> Self {
        Self {
            families: vec![family],
            ..Self::table1()
        }
    }

    /// Valid architectures in a fixed order, without learning rates.
    pub fn architectures(&self) -> Vec<Architecture> {
        let mut out = Vec::new();
        for &family in &self.families {
            match family {
                Family::Fir => out.extend(self.taps.iter().filter_map(|&k| Architecture::fir(k).ok())),
                Family::Kan1 => out.extend(
                    self.taps
                        .iter()
                        .filter_map(|&k| Architecture::kan1(k, self.kan1_grid).ok()),
                ),
                Family::Cnn2 => {
                    for (c1, k1, s1, k2, s2) in self.two_layer() {
                        out.extend(Architecture::cnn2(c1, k1, s1, k2, s2).ok());
                    }
                }
                Family::Kan2 => {
                    for (c1, k1, s1, k2, s2) in self.two_layer() {
                        for &g1 in &self.grids {
                            for &g2 in &self.grids {
                                out.extend(Architecture::kan2(c1, k1, s1, g1, k2, s2, g2).ok());
                            }
                        }
                    }
                }
                Family::Custom => {}
            }
        }
        out
    }

    fn two_layer(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for &c1 in &self.c1 {
            for &k1 in &self.k1 {
                for &s1 in &self.s1 {
                    for &k2 in &self.k2 {
                        for &s2 in &self.s2 {
                            out.push((c1, k1, s1, k2, s2));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn enumerate(&self) -> Vec<Candidate> {
        with_lrs(self.architectures(), &self.lrs)
    }

    /// All single-layer architectures plus `two_layer_each` sampled CNN-2
    /// and KAN-2 architectures (32 in total for the default grid).
    pub fn desk_subset(&self, two_layer_each: usize, root_seed: u64) -> Vec<Architecture> {
        let mut out = Vec::new();
        for &family in &self.families {
            let archs = Self {
                families: vec![family],
                ..self.clone()
            }
            .architectures();
            match family {
                Family::Cnn2 | Family::Kan2 => {
                    let mut rng = seed::rng(seed::derive_seed(root_seed, &format!("desk-subset-{family}")));
                    let mut picked = sample(&mut rng, archs.len(), two_layer_each.min(archs.len())).into_vec();
                    picked.sort_unstable();
                    out.extend(picked.into_iter().map(|i| archs[i].clone()));
                }
                _ => out.extend(archs),
            }
        }
        out
    }
}

pub fn with_lrs(archs: Vec<Architecture>, lrs: &[f64]) -> Vec<Candidate> {
    archs
        .into_iter()
        .flat_map(|arch| lrs.iter().map(move |&lr| Candidate { arch: arch.clone(), lr }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub arch: Architecture,
    pub lr: f64,
}

impl Candidate {
    /// `<descriptor>-lr<lr>`, e.g. `fir-k21-s2-lr3.16e-3`.
    pub fn id(&self) -> String {
        format!("{}-lr{:.2e}", self.arch.descriptor(), self.lr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub rvms: f64,
    pub metric: f64,
    pub candidate: String,
    pub threshold: Option<f64>,
    pub checkpoint: Option<String>,
}

impl ParetoPoint {
    pub fn new(rvms: f64, metric: f64) -> Self {
        Self {
            rvms,
            metric,
            candidate: String::new(),
            threshold: None,
            checkpoint: None,
        }
    }
}

/// Points not dominated in (rvms, metric), both minimized. Points equal in
/// both coordinates are kept once; NaN entries are ignored. Sorted by rvms.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut order: Vec<&ParetoPoint> = points
        .iter()
        .filter(|p| !p.rvms.is_nan() && !p.metric.is_nan())
        .collect();
    order.sort_by(|a, b| a.rvms.total_cmp(&b.rvms).then(a.metric.total_cmp(&b.metric)));
    let mut best = f64::INFINITY;
    let mut front = Vec::new();
    for p in order {
        if p.metric < best {
            best = p.metric;
            front.push(p.clone());
        }
    }
    front
}

pub const POINTS_HEADER: [&str; 5] = ["rvms", "metric", "candidate", "threshold", "checkpoint"];

pub fn write_points_csv(path: &Path, points: &[ParetoPoint]) -> Result<()> {
    let rows = points.iter().map(|p| {
        [
            fmt_f64(p.rvms),
            fmt_f64(p.metric),
            p.candidate.clone(),
            p.threshold.map(fmt_f64).unwrap_or_default(),
            p.checkpoint.clone().unwrap_or_default(),
        ]
    });
    write_csv_rows(path, &POINTS_HEADER, rows)
}

/// Reads any CSV with `rvms` and `metric` columns; `candidate`, `threshold`
/// and `checkpoint` are picked up when present. Rows with an empty metric
/// (failed runs) are skipped.
pub fn read_points_csv(path: &Path) -> Result<Vec<ParetoPoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(rvms), Some(metric)) = (col("rvms"), col("metric")) else {
        return Err(Error::format(format!("{}: needs rvms and metric columns", path.display())));
    };
    let (cand, thr, ck) = (col("candidate"), col("threshold"), col("checkpoint"));
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: Option<usize>| i.and_then(|i| rec.get(i)).map(str::trim).filter(|s| !s.is_empty());
        let num = |i: usize| -> Result<Option<f64>> {
            field(Some(i))
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::format(format!("row {}: bad number {s:?}", line + 2)))
                })
                .transpose()
        };
        let (Some(r), Some(m)) = (num(rvms)?, num(metric)?) else {
            continue;
        };
        out.push(ParetoPoint {
            rvms: r,
            metric: m,
            candidate: field(cand).unwrap_or_default().to_string(),
            threshold: match thr {
                Some(i) => num(i)?,
                None => None,
            },
            checkpoint: field(ck).map(str::to_string),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub link: LinkConfig,
    pub frames: usize,
    pub symbols_per_frame: usize,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            link: LinkConfig::default(),
            frames: 8,
            symbols_per_frame: 280_000,
            train: TrainConfig::default(),
            prune: PruneConfig::default(),
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn paper_scale() -> Self {
        let train = TrainConfig::paper_scale();
        Self {
            symbols_per_frame: 2_800_000,
            prune: PruneConfig {
                retrain: train.clone(),
                ..PruneConfig::default()
            },
            train,
            ..Self::default()
        }
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(toml::to_string(self)?.as_bytes()))
    }

    pub fn frame_seed(&self, index: usize) -> u64 {
        seed::derive_seed(self.seed, &format!("frame-{index}"))
    }

    pub fn build_frames(&self) -> Result<Vec<WaveformFrame>> {
        self.link.validate()?;
        (0..self.frames)
            .into_par_iter()
            .map(|i| build_frame(&self.link, self.symbols_per_frame, self.frame_seed(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub status: RunStatus,
    /// Per-candidate results file relative to the campaign directory.
    pub results: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// On-disk record of completed candidate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub runs: BTreeMap<String, ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RESULTS_FILE: &str = "results.csv";
pub const FRONTIER_FILE: &str = "frontier.csv";
pub const UNPRUNED_FRONTIER_FILE: &str = "frontier_unpruned.csv";

impl CampaignManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(toml::from_str(&fs::read_to_string(path)?)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join(MANIFEST_FILE), toml::to_string(self)?.as_bytes())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// One results-table row. `stage` is `trained` for the model before
/// pruning and `pruned` for a pruned and retrained entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub candidate: String,
    pub family: String,
    pub architecture: String,
    pub lr: f64,
    pub stage: String,
    pub threshold: Option<f64>,
    pub rvms: f64,
    pub metric: f64,
    pub checkpoint: String,
}

impl ResultRow {
    pub fn point(&self) -> ParetoPoint {
        ParetoPoint {
            rvms: self.rvms,
            metric: self.metric,
            candidate: self.candidate.clone(),
            threshold: self.threshold,
            checkpoint: Some(self.checkpoint.clone()).filter(|c| !c.is_empty()),
        }
    }
}

fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = csv::Writer::from_path(&tmp)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    drop(w);
    if rows.is_empty() {
        fs::write(&tmp, RESULTS_HEADER.join(",") + "\n")?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub const RESULTS_HEADER: [&str; 9] = [
    "candidate",
    "family",
    "architecture",
    "lr",
    "stage",
    "threshold",
    "rvms",
    "metric",
    "checkpoint",
];

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| Ok(r?)).collect()
}

fn threshold_tag(t: f64) -> String {
    format!("t{t:05.2}")
}

/// Train one candidate on every frame, prune-and-retrain, and save the
/// frame-0 model of every entry under `checkpoint_dir`.
pub fn run_candidate(
    candidate: &Candidate,
    frames: &[WaveformFrame],
    cfg: &CampaignConfig,
    checkpoint_dir: &Path,
    relative_to: &Path,
) -> Result<Vec<ResultRow>> {
    let id = candidate.id();
    let train_cfg = TrainConfig {
        lr: candidate.lr,
        seed: seed::derive_seed(cfg.seed, &id),
        ..cfg.train.clone()
    };
    let prune_cfg = PruneConfig {
        retrain: TrainConfig {
            lr: candidate.lr,
            seed: train_cfg.seed,
            ..cfg.prune.retrain.clone()
        },
        ..cfg.prune.clone()
    };
    let runs = training::train_on_frames(&candidate.arch, frames, &train_cfg)?;
    let (models, records): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    fs::create_dir_all(checkpoint_dir)?;
    let save = |model: &EqualizerModel, name: &str| -> Result<String> {
        let path = checkpoint_dir.join(format!("{name}.kqm"));
        model.save(&path)?;
        Ok(path
            .strip_prefix(relative_to)
            .unwrap_or(&path)
            .display()
            .to_string())
    };
    let row = |stage: &str, threshold: Option<f64>, rvms: f64, metric: f64, checkpoint: String| ResultRow {
        candidate: id.clone(),
        family: candidate.arch.family().to_string(),
        architecture: candidate.arch.descriptor(),
        lr: candidate.lr,
        stage: stage.to_string(),
        threshold,
        rvms,
        metric,
        checkpoint,
    };
    let mut rows = vec![row(
        "trained",
        None,
        models[0].count_rvms().total,
        training::max_mean_ber(&records),
        save(&models[0], "trained")?,
    )];
    for entry in pruning::prune_and_retrain(&models, frames, &prune_cfg)? {
        if entry.succeeded() {
            let ck = save(&entry.models[0], &threshold_tag(entry.threshold))?;
            rows.push(row("pruned", Some(entry.threshold), entry.rvms, entry.metric, ck));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CampaignSummary {
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Runs every candidate not yet recorded in `dir`'s manifest, then rewrites
/// the results table and both frontiers from all recorded runs.
pub fn run_campaign(candidates: &[Candidate], cfg: &CampaignConfig, dir: &Path) -> Result<CampaignSummary> {
    fs::create_dir_all(dir.join("runs"))?;
    let hash = cfg.hash()?;
    let manifest = match CampaignManifest::load(dir)? {
        Some(m) if m.config_hash != hash => {
            return Err(Error::config(format!(
                "{} belongs to a campaign with a different configuration",
                dir.display()
            )))
        }
        Some(m) => m,
        None => CampaignManifest {
            config_hash: hash,
            seed: cfg.seed,
            runs: BTreeMap::new(),
        },
    };
    manifest.save(dir)?;
    let pending: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| !manifest.runs.contains_key(&c.id()))
        .collect();
    let mut summary = CampaignSummary {
        skipped: candidates.len() - pending.len(),
        ..Default::default()
    };
    if !pending.is_empty() {
        let frames = cfg.build_frames()?;
        let manifest = Mutex::new(manifest);
        let outcomes: Vec<bool> = pending
            .par_iter()
            .map(|c| -> Result<bool> {
                let id = c.id();
                let results = format!("runs/{id}.csv");
                let ck_dir = dir.join("checkpoints").join(&id);
                let (entry, ok) = match run_candidate(c, &frames, cfg, &ck_dir, dir) {
                    Ok(rows) => {
                        write_rows(&dir.join(&results), &rows)?;
                        let entry = ManifestEntry {
                            id: id.clone(),
                            status: RunStatus::Done,
                            results,
                            rows: rows.len(),
                            error: None,
                        };
                        (entry, true)
                    }
                    Err(e) => {
                        write_rows(&dir.join(&results), &[])?;
                        let entry = ManifestEntry {
                            id: id.clone(),
                            status: RunStatus::Failed,
                            results,
                            rows: 0,
                            error: Some(e.to_string()),
                        };
                        (entry, false)
                    }
                };
                let mut m = manifest.lock().expect("manifest lock poisoned");
                m.runs.insert(id, entry);
                m.save(dir)?;
                Ok(ok)
            })
            .collect::<Result<_>>()?;
        summary.trained = outcomes.iter().filter(|&&ok| ok).count();
        summary.failed = outcomes.len() - summary.trained;
    }
    let manifest = CampaignManifest::load(dir)?.expect("manifest written above");
    let mut rows = Vec::new();
    for c in candidates {
        if let Some(entry) = manifest.runs.get(&c.id()) {
            rows.extend(read_rows(&dir.join(&entry.results))?);
        }
    }
    write_rows(&dir.join(RESULTS_FILE), &rows)?;
    write_points_csv(&dir.join(FRONTIER_FILE), &frontier(&rows, false))?;
    write_points_csv(&dir.join(UNPRUNED_FRONTIER_FILE), &frontier(&rows, true))?;
    Ok(summary)
}

/// Learning rate per architecture with the lowest metric before pruning;
/// ties go to the first in table order.
pub fn best_lrs(rows: &[ResultRow]) -> BTreeMap<String, f64> {
    let mut best: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.stage == "trained" && !r.metric.is_nan()) {
        let e = best.entry(r.architecture.clone()).or_insert((f64::INFINITY, r.lr));
        if r.metric < e.0 {
            *e = (r.metric, r.lr);
        }
    }
    best.into_iter().map(|(k, (_, lr))| (k, lr)).collect()
}

/// Pareto front over the best-LR run of each architecture. The unpruned
/// front uses only the threshold-0 entries.
pub fn frontier(rows: &[ResultRow], unpruned_only: bool) -> Vec<ParetoPoint> {
    let lrs = best_lrs(rows);
    let points: Vec<ParetoPoint> = rows
        .iter()
        .filter(|r| lrs.get(&r.architecture) == Some(&r.lr))
        .filter(|r| if unpruned_only { r.threshold == Some(0.0) } else { true })
        .map(ResultRow::point)
        .collect();
    pareto_front(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub link: LinkConfig,
    pub budgets: Vec<f64>,
    /// Relative rvms tolerance around each budget.
    pub tolerance: f64,
    pub rops: Vec<f64>,
    pub frames_per_rop: usize,
    pub symbols_per_frame: usize,
    pub seed: u64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            link: LinkConfig::default(),
            budgets: vec![21.0, 51.0, 121.0, 321.0],
            tolerance: 0.1,
            rops: rop_grid(-30.0, 2.0, 2.0),
            frames_per_rop: 2,
            symbols_per_frame: 100_000,
            seed: 1,
        }
    }
}

pub fn rop_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|i| from + step * i as f64).collect()
}

/// Lowest-metric point within `tolerance` of `budget`.
pub fn select_for_budget(points: &[ParetoPoint], budget: f64, tolerance: f64) -> Option<&ParetoPoint> {
    points
        .iter()
        .filter(|p| (p.rvms - budget).abs() <= tolerance * budget && !p.metric.is_nan())
        .min_by(|a, b| a.metric.total_cmp(&b.metric))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCurve {
    pub budget: f64,
    /// `None` when no point lies within tolerance of the budget.
    pub selected: Option<ParetoPoint>,
    /// `(rop, mean BER)`.
    pub curve: Vec<(f64, f64)>,
}

/// Mean BER over `frames` of every usable symbol.
pub fn mean_ber(model: &EqualizerModel, frames: &[WaveformFrame]) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        let region = model.architecture().usable_symbols(f.len());
        total += evaluate_ber_on(model, &f.samples_f64(), &f.symbols, region)?;
    }
    Ok(total / frames.len() as f64)
}

/// Fresh evaluation frames at every ROP of the sweep.
pub fn deployment_frames(cfg: &DeploymentConfig) -> Result<Vec<Vec<WaveformFrame>>> {
    cfg.rops
        .par_iter()
        .map(|&rop| {
            let link = LinkConfig { rop, ..cfg.link.clone() };
            (0..cfg.frames_per_rop)
                .map(|i| {
                    let s = seed::derive_seed(cfg.seed, &format!("deploy-rop{rop}-{i}"));
                    build_frame(&link, cfg.symbols_per_frame, s)
                })
                .collect()
        })
        .collect()
}

/// Evaluates the best point near each budget on fresh frames over the ROP
/// grid; `load` resolves a point's checkpoint reference.
pub fn deployment_sweep<F>(points: &[ParetoPoint], cfg: &DeploymentConfig, load: F) -> Result<Vec<BudgetCurve>>
where
    F: Fn(&ParetoPoint) -> Result<EqualizerModel> + Sync,
{
    let frames = deployment_frames(cfg)?;
    cfg.budgets
        .iter()
        .map(|&budget| {
            let Some(point) = select_for_budget(points, budget, cfg.tolerance) else {
                return Ok(BudgetCurve {
                    budget,
                    selected: None,
                    curve: vec![],
                });
            };
            let model = load(point)?;
            let curve = cfg
                .rops
                .par_iter()
                .zip(&frames)
                .map(|(&rop, f)| Ok((rop, mean_ber(&model, f)?)))
                .collect::<Result<_>>()?;
            Ok(BudgetCurve {
                budget,
                selected: Some(point.clone()),
                curve,
            })
        })
        .collect()
}

pub const DEPLOYMENT_HEADER: [&str; 5] = ["rop_dbm", "ber", "rvms", "candidate", "checkpoint"];

pub fn write_deployment_csv(path: &Path, curve: &BudgetCurve) -> Result<()> {
    let p = curve.selected.clone().unwrap_or_else(|| ParetoPoint::new(f64::NAN, f64::NAN));
    let rows = curve.curve.iter().map(|&(rop, ber)| {
        [
            fmt_f64(rop),
            fmt_f64(ber),
            fmt_f64(p.rvms),
            p.candidate.clone(),
            p.checkpoint.clone().unwrap_or_default(),
        ]
    });
    write_csv_rows(path, &DEPLOYMENT_HEADER, rows)
}

/// Resolves a checkpoint reference relative to a campaign directory.
pub fn checkpoint_path(campaign_dir: &Path, point: &ParetoPoint) -> Result<PathBuf> {
    let Some(ck) = &point.checkpoint else {
        return Err(Error::contract(format!("point {} has no checkpoint", point.candidate)));
    };
    let p = PathBuf::from(ck);
    Ok(if p.is_absolute() { p } else { campaign_dir.join(p) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<ParetoPoint> {
        v.iter().map(|&(r, m)| ParetoPoint::new(r, m)).collect()
    }

    fn coords(v: &[ParetoPoint]) -> Vec<(f64, f64)> {
        v.iter().map(|p| (p.rvms, p.metric)).collect()
    }

    #[test]
    fn table1_grid_sizes() {
        assert_eq!(SearchSpace::only(Family::Kan2).enumerate().len(), 3888);
        assert_eq!(SearchSpace::only(Family::Cnn2).enumerate().len(), 972);
        assert_eq!(SearchSpace::only(Family::Fir).enumerate().len(), 16);
        assert_eq!(SearchSpace::only(Family::Kan1).enumerate().len(), 16);
        assert!(SearchSpace::empty().enumerate().is_empty());
    }

    #[test]
    fn last_layer_channels_follow_strides() {
        for arch in SearchSpace::only(Family::Kan2).architectures() {
            let s: usize = arch.layers.iter().map(|l| l.s).product();
            assert_eq!(arch.layers[1].c_out, s / 2);
        }
    }

    #[test]
    fn kan1_uses_grid_17() {
        for arch in SearchSpace::only(Family::Kan1).architectures() {
            assert_eq!(arch.layers[0].kind, crate::LayerKind::Kan { grid: 17 });
        }
    }

    #[test]
    fn enumeration_is_deterministic_with_unique_ids() {
        let a = SearchSpace::table1().enumerate();
        assert_eq!(a, SearchSpace::table1().enumerate());
        let ids: std::collections::BTreeSet<String> = a.iter().map(Candidate::id).collect();
        assert_eq!(ids.len(), a.len());
    }

    #[test]
    fn desk_subset_has_32_architectures() {
        let s = SearchSpace::table1().desk_subset(12, 0);
        assert_eq!(s.len(), 32);
        assert_eq!(s, SearchSpace::table1().desk_subset(12, 0));
        assert_eq!(s.iter().filter(|a| a.family() == Family::Fir).count(), 4);
    }

    #[test]
    fn dominance_example() {
        let f = pareto_front(&pts(&[(10.0, 1e-2), (20.0, 1e-3), (30.0, 1e-3)]));
        assert_eq!(coords(&f), vec![(10.0, 1e-2), (20.0, 1e-3)]);
        let single = pts(&[(5.0, 0.1)]);
        assert_eq!(pareto_front(&single), single);
        let dup = pareto_front(&pts(&[(5.0, 0.1), (5.0, 0.1), (5.0, 0.2)]));
        assert_eq!(coords(&dup), vec![(5.0, 0.1)]);
    }

    #[test]
    fn budget_selection_respects_tolerance() {
        let p = pts(&[(19.0, 1e-2), (23.5, 1e-3), (50.0, 1e-4)]);
        assert_eq!(select_for_budget(&p, 21.0, 0.1).unwrap().rvms, 19.0);
        assert!(select_for_budget(&p, 321.0, 0.1).is_none());
    }

    #[test]
    fn rop_grid_endpoints() {
        let g = rop_grid(-30.0, 2.0, 2.0);
        assert_eq!(g.len(), 17);
        assert_eq!((g[0], *g.last().unwrap()), (-30.0, 2.0));
    }
}
