//! `kaneq`: simulate links, train, prune, run search campaigns, sweep
//! deployments and extract Pareto fronts. All outputs are CSV files, binary
//! frames/checkpoints and a `run_manifest.toml` next to them.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kaneq::equalizer::Family;
use kaneq::io::{fmt_f64, write_csv_rows};
use kaneq::pruning::{self, SweepEntry};
use kaneq::search::{self, with_lrs, Candidate, SearchSpace};
use kaneq::training::{self, TrainConfig, LR_GRID};
use kaneq::{channel, Architecture, EqualizerModel, WaveformFrame};

use config::ConfigFile;
use manifest::RunManifest;

pub const THREADS_ENV: &str = "KANEQ_THREADS";

#[derive(Parser)]
#[command(name = "kaneq", version, about = "KAN/CNN/FIR equalizers for simulated PAM4 IM/DD links")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML with [link], [train], [prune],
    /// [campaign], [deployment] sections; all keys optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Paper-scale defaults: 7600 iterations, 200 test blocks,
    /// 2.8e6-symbol frames, 1-dB ROP steps.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one frame of the link and write it to a frame file.
    Simulate {
        #[arg(long, allow_negative_numbers = true)]
        rop: Option<f64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        symbols: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also export the frame as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train one model per frame.
    Train {
        /// Descriptor such as `kan2-c2-k64-s1-g9-k32-s2-g9`, or a TOML file.
        #[arg(long)]
        arch: String,
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prune trained models at every threshold and retrain on their frames.
    Prune {
        /// One checkpoint per frame, in frame order.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// `default` or a comma-separated list of percentages.
        #[arg(long, default_value = "default")]
        thresholds: String,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train, prune and retrain a set of candidates; resumable.
    Campaign {
        #[arg(long)]
        out_dir: PathBuf,
        /// Enumerate the complete grid instead of the 32-architecture subset.
        #[arg(long)]
        full_grid: bool,
        /// Restrict to these families (FIR, KAN-1, CNN-2, KAN-2).
        #[arg(long, value_delimiter = ',')]
        family: Vec<String>,
        /// Explicit architecture descriptors instead of the grid.
        #[arg(long, value_delimiter = ',')]
        arch: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        lrs: Vec<f64>,
        /// Keep only the first N candidates.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Evaluate frontier models near each rvms budget over the ROP grid.
    Sweep {
        #[arg(long)]
        campaign_dir: PathBuf,
        /// Defaults to the campaign's pruned frontier.
        #[arg(long)]
        frontier: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<f64>,
    },
    /// Extract the Pareto front of any CSV with rvms and metric columns.
    Pareto {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a thread count, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// `Ok(false)` means the command ran but could not produce every requested
/// artifact.
fn run(cli: Cli) -> Result<bool> {
    let cfg = ConfigFile::load(cli.common.config.as_deref(), cli.common.paper_scale)?;
    match cli.command {
        Command::Simulate {
            rop,
            symbols,
            seed,
            out,
            csv,
        } => simulate(cfg, rop, symbols, seed, &out, csv.as_deref()),
        Command::Train {
            arch,
            frames,
            out_dir,
            lr,
            iterations,
            seed,
        } => train(cfg, &arch, &frames, &out_dir, lr, iterations, seed),
        Command::Prune {
            models,
            frames,
            out_dir,
            thresholds,
            lr,
            iterations,
        } => prune(cfg, &models, &frames, &out_dir, &thresholds, lr, iterations),
        Command::Campaign {
            out_dir,
            full_grid,
            family,
            arch,
            lrs,
            limit,
        } => campaign(cfg, &out_dir, full_grid, &family, &arch, &lrs, limit),
        Command::Sweep {
            campaign_dir,
            frontier,
            out_dir,
            budgets,
        } => sweep(cfg, &campaign_dir, frontier.as_deref(), &out_dir, &budgets),
        Command::Pareto { input, out } => pareto(&input, &out),
    }
}

fn simulate(
    mut cfg: ConfigFile,
    rop: Option<f64>,
    symbols: Option<u64>,
    seed: u64,
    out: &Path,
    csv: Option<&Path>,
) -> Result<bool> {
    if let Some(rop) = rop {
        cfg.link.rop = rop;
    }
    let n = symbols.map(|s| s as usize).unwrap_or(cfg.campaign.symbols_per_frame);
    let mut manifest = RunManifest::start("simulate", kaneq::io::hex(&cfg.link.hash()));
    manifest.seed("frame", seed);
    let frame = channel::build_frame(&cfg.link, n, seed)?;
    frame.save(out).with_context(|| format!("writing {}", out.display()))?;
    manifest.artifact(out)?;
    if let Some(csv) = csv {
        frame.write_csv(csv)?;
        manifest.artifact(csv)?;
    }
    println!(
        "{}: {} symbols, ROP {} dBm, CD {:.2} ps/nm, SNR {:.2} dB, slicer BER {:.3e}",
        out.display(),
        frame.len(),
        frame.rop,
        frame.accumulated_dispersion,
        frame.estimate_snr_db(),
        frame.slicer_ber()
    );
    manifest.finish(&sibling_manifest(out), true)?;
    Ok(true)
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.toml");
    out.with_file_name(name)
}

fn parse_arch(spec: &str) -> Result<Architecture> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return Architecture::from_toml(&text).with_context(|| format!("invalid architecture in {spec}"));
    }
    Ok(Architecture::from_descriptor(spec)?)
}

fn load_frames(paths: &[PathBuf]) -> Result<Vec<WaveformFrame>> {
    paths
        .iter()
        .map(|p| WaveformFrame::load(p).with_context(|| format!("reading frame {}", p.display())))
        .collect()
}

fn train_config(cfg: &ConfigFile, lr: Option<f64>, iterations: Option<usize>, seed: Option<u64>) -> TrainConfig {
    let mut t = cfg.train.clone();
    if let Some(lr) = lr {
        t.lr = lr;
    }
    if let Some(it) = iterations {
        t.iterations = it;
    }
    if let Some(s) = seed {
        t.seed = s;
    }
    t
}

fn train(
    cfg: ConfigFile,
    arch: &str,
    frame_paths: &[PathBuf],
    out_dir: &Path,
    lr: Option<f64>,
    iterations: Option<usize>,
    seed: Option<u64>,
) -> Result<bool> {
    let arch = parse_arch(arch)?;
    let tcfg = train_config(&cfg, lr, iterations, seed);
    let frames = load_frames(frame_paths)?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::start("train", cfg.hash()?);
    manifest.seed("train", tcfg.seed);
    let runs = training::train_on_frames(&arch, &frames, &tcfg)?;
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for (i, (model, record)) in runs.iter().enumerate() {
        manifest.seed(&format!("init-{i}"), training::init_seed(&tcfg, i));
        let csv = out_dir.join(format!("train_frame{i}.csv"));
        let ck = out_dir.join(format!("model_frame{i}.kqm"));
        record.write_csv(&csv)?;
        model.save(&ck)?;
        summary.push([
            i.to_string(),
            frame_paths[i].display().to_string(),
            fmt_f64(record.final_mean_ber),
            fmt_f64(model.count_rvms().total),
            ck.display().to_string(),
        ]);
        outputs.extend([csv, ck]);
    }
    let summary_path = out_dir.join("summary.csv");
    write_csv_rows(
        &summary_path,
        &["frame", "frame_file", "final_mean_ber", "rvms", "checkpoint"],
        summary,
    )?;
    outputs.push(summary_path);
    manifest.artifacts(&outputs)?;
    let records: Vec<_> = runs.iter().map(|(_, r)| r.clone()).collect();
    println!(
        "{}: {} frames, rvms {}, max mean BER {:.3e}",
        arch.descriptor(),
        frames.len(),
        runs[0].0.count_rvms().total,
        training::max_mean_ber(&records)
    );
    manifest.finish(&out_dir.join("run_manifest.toml"), true)?;
    Ok(true)
}

fn parse_thresholds(text: &str, cfg: &ConfigFile) -> Result<Vec<f64>> {
    if text.trim() == "default" {
        return Ok(cfg.prune.thresholds.clone());
    }
    text.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad threshold {t:?}")))
        .collect()
}

fn threshold_file(t: f64) -> String {
    format!("t{t:05.2}.kqm")
}

#[allow(clippy::too_many_arguments)]
fn prune(
    cfg: ConfigFile,
    model_paths: &[PathBuf],
    frame_paths: &[PathBuf],
    out_dir: &Path,
    thresholds: &str,
    lr: Option<f64>,
    iterations: Option<usize>,
) -> Result<bool> {
    if model_paths.len() != frame_paths.len() {
        bail!("need one model per frame ({} models, {} frames)", model_paths.len(), frame_paths.len());
    }
    let models: Vec<EqualizerModel> = model_paths
        .iter()
        .map(|p| EqualizerModel::load(p).with_context(|| format!("reading model {}", p.display())))
        .collect::<Result<_>>()?;
    let frames = load_frames(frame_paths)?;
    let retrain = train_config(&cfg, lr, iterations, None);
    let pcfg = kaneq::pruning::PruneConfig {
        thresholds: parse_thresholds(thresholds, &cfg)?,
        retrain,
    };
    let mut manifest = RunManifest::start("prune", cfg.hash()?);
    manifest.seed("retrain", pcfg.retrain.seed);
    let entries = pruning::prune_and_retrain(&models, &frames, &pcfg)?;
    let ck_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir)?;
    let mut outputs = Vec::new();
    let mut checkpoints = Vec::new();
    for e in &entries {
        checkpoints.push(save_entry(e, &ck_dir)?);
        outputs.extend(checkpoints.last().cloned().flatten());
    }
    let sweep = out_dir.join("sweep.csv");
    pruning::write_sweep_csv(&sweep, &entries, &checkpoints)?;
    outputs.push(sweep);
    manifest.artifacts(&outputs)?;
    for e in &entries {
        match &e.failure {
            None => println!("threshold {:>5}%: rvms {}, metric {:.3e}", e.threshold, e.rvms, e.metric),
            Some(f) => println!("threshold {:>5}%: failed ({f})", e.threshold),
        }
    }
    manifest.finish(&out_dir.join("run_manifest.toml"), true)?;
    Ok(true)
}

fn save_entry(e: &SweepEntry, dir: &Path) -> Result<Option<PathBuf>> {
    let Some(model) = e.models.first() else {
        return Ok(None);
    };
    let path = dir.join(threshold_file(e.threshold));
    model.save(&path)?;
    Ok(Some(path))
}

#[allow(clippy::too_many_arguments)]
fn campaign(
    cfg: ConfigFile,
    out_dir: &Path,
    full_grid: bool,
    families: &[String],
    archs: &[String],
    lrs: &[f64],
    limit: Option<usize>,
) -> Result<bool> {
    let mut space = SearchSpace::table1();
    if !families.is_empty() {
        space.families = families.iter().map(|f| f.parse::<Family>()).collect::<kaneq::Result<_>>()?;
    }
    let lrs = if lrs.is_empty() { LR_GRID.to_vec() } else { lrs.to_vec() };
    let architectures = if !archs.is_empty() {
        archs.iter().map(|a| parse_arch(a)).collect::<Result<Vec<_>>>()?
    } else if full_grid {
        space.architectures()
    } else {
        space.desk_subset(cfg.campaign.two_layer_each, cfg.campaign.seed)
    };
    let mut candidates: Vec<Candidate> = with_lrs(architectures, &lrs);
    if let Some(n) = limit {
        candidates.truncate(n);
    }
    let ccfg = cfg.campaign_config();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::start("campaign", ccfg.hash()?);
    manifest.seed("campaign", ccfg.seed);
    let summary = search::run_campaign(&candidates, &ccfg, out_dir)?;
    manifest.artifacts(&[
        out_dir.join(search::MANIFEST_FILE),
        out_dir.join(search::RESULTS_FILE),
        out_dir.join(search::FRONTIER_FILE),
        out_dir.join(search::UNPRUNED_FRONTIER_FILE),
    ])?;
    println!(
        "{} candidates: {} trained, {} already done, {} failed",
        candidates.len(),
        summary.trained,
        summary.skipped,
        summary.failed
    );
    manifest.finish(&out_dir.join("run_manifest.toml"), true)?;
    Ok(true)
}

fn sweep(
    cfg: ConfigFile,
    campaign_dir: &Path,
    frontier: Option<&Path>,
    out_dir: &Path,
    budgets: &[f64],
) -> Result<bool> {
    let frontier = frontier
        .map(Path::to_path_buf)
        .unwrap_or_else(|| campaign_dir.join(search::FRONTIER_FILE));
    let points = search::read_points_csv(&frontier)?;
    let mut dcfg = cfg.deployment_config();
    if !budgets.is_empty() {
        dcfg.budgets = budgets.to_vec();
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::start("sweep", cfg.hash()?);
    manifest.seed("deployment", dcfg.seed);
    let curves = search::deployment_sweep(&points, &dcfg, |p| {
        EqualizerModel::load(&search::checkpoint_path(campaign_dir, p)?)
    })?;
    let mut complete = true;
    let mut outputs = Vec::new();
    for c in &curves {
        match &c.selected {
            Some(p) => {
                let path = out_dir.join(format!("deployment_rvms{}.csv", c.budget));
                search::write_deployment_csv(&path, c)?;
                println!("budget {} rvms: {} ({} rvms)", c.budget, p.candidate, p.rvms);
                outputs.push(path);
            }
            None => {
                eprintln!(
                    "budget {} rvms: no frontier point within {}%",
                    c.budget,
                    dcfg.tolerance * 100.0
                );
                complete = false;
            }
        }
    }
    manifest.artifacts(&outputs)?;
    manifest.finish(&out_dir.join("run_manifest.toml"), complete)?;
    Ok(complete)
}

fn pareto(input: &Path, out: &Path) -> Result<bool> {
    let points = search::read_points_csv(input)?;
    let front = search::pareto_front(&points);
    search::write_points_csv(out, &front)?;
    let mut manifest = RunManifest::start("pareto", kaneq::io::sha256_hex(&std::fs::read(input)?));
    manifest.artifact(out)?;
    println!("{} points, {} on the frontier", points.len(), front.len());
    manifest.finish(&sibling_manifest(out), true)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_lists() {
        let cfg = ConfigFile::default();
        assert_eq!(parse_thresholds("default", &cfg).unwrap().len(), 22);
        assert_eq!(parse_thresholds("0, 5,10", &cfg).unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(parse_thresholds("5,x", &cfg).is_err());
    }

    #[test]
    fn checkpoint_names_sort_by_threshold() {
        assert_eq!(threshold_file(1.25), "t01.25.kqm");
        assert_eq!(threshold_file(95.0), "t95.00.kqm");
        assert!(threshold_file(5.0) < threshold_file(10.0));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
