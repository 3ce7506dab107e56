//! Builds a protocol from an [`ExperimentConfig`], runs it, and writes the
//! results to disk.
//!
//! Output directory layout:
//!
//! | file                  | content                                           |
//! |-----------------------|---------------------------------------------------|
//! | `config.toml`         | the configuration with `k` and crashes resolved   |
//! | `metrics.csv`         | one row per checkpoint                            |
//! | `ledger.csv`          | traffic per iteration and link class              |
//! | `cost_report.txt/csv` | analytic cost model for the same parameters       |
//! | `verification.txt`    | ledger totals checked against the cost model      |
//! | `FAILED`              | present only when the run aborted; holds the error |

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::cluster::{read_ledger_totals, run_with_progress, CrashSchedule, Network, Protocol, RunOutcome, TrafficLedger};
use crate::config::ExperimentConfig;
use crate::cost::{analytic_costs, predict_links, verify_links, verify_totals, CostModelInput, CostReport, ProtocolKind};
use crate::data::{make_checkerboard, make_ring, shard_iid, Dataset, DatasetDescriptor};
use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::metrics::{MetricsRow, Scorer};
use crate::protocols::flgan::{FlGan, FlGanSettings};
use crate::protocols::mdgan::{MdGan, MdGanSettings, MergeRecord};
use crate::protocols::period_iterations;
use crate::protocols::standalone::Standalone;
use crate::cluster::BYTES_PER_SCALAR;

pub fn load_dataset(descriptor: &DatasetDescriptor, seed: u64) -> Result<Dataset> {
    match descriptor {
        DatasetDescriptor::Ring(spec) => make_ring(spec, seed),
        DatasetDescriptor::Checkerboard(spec) => make_checkerboard(spec, seed),
        DatasetDescriptor::Idx { path } => load_idx(path),
    }
}

/// Samples per worker used for the swap and round period: the smallest shard.
pub fn local_samples(dataset_len: usize, workers: usize) -> usize {
    dataset_len / workers
}

/// What a finished run leaves in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub outcome: RunOutcome,
    pub cost: CostReport,
    /// `Err` describes the first link class whose totals disagree.
    pub verification: std::result::Result<(), String>,
    pub generator_params: Vec<f64>,
    /// MD-GAN merges or FL-GAN rounds.
    pub merges: Vec<MergeRecord>,
    /// Swap count for MD-GAN.
    pub swaps: usize,
}

/// Partial results of an aborted run.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub metrics: Vec<MetricsRow>,
    pub ledger: TrafficLedger,
}

struct Prepared {
    config: ExperimentConfig,
    crashes: CrashSchedule,
    dataset: Dataset,
    cost_input: CostModelInput,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let config = config.resolved()?;
    let crashes = config.crash_schedule()?;
    let dataset = load_dataset(&config.dataset, config.seed)?;
    let workers = if config.protocol == ProtocolKind::Standalone { 1 } else { config.workers };
    if workers > dataset.len() {
        return Err(Error::Config(format!("{workers} workers but only {} samples", dataset.len())));
    }
    let (g, d) = config.architecture.build(dataset.dim(), config.seed)?;
    let cost_input = CostModelInput {
        workers: workers as u64,
        batch: config.batch as u64,
        data_dim: dataset.dim() as u64,
        generator_params: g.net.param_count() as u64,
        discriminator_params: d.net.param_count() as u64,
        iterations: config.iterations,
        local_samples: local_samples(dataset.len(), workers) as u64,
        epochs: config.epochs as u64,
        k: config.resolved_k().min(workers) as u64,
        bytes_per_scalar: BYTES_PER_SCALAR,
    };
    Ok(Prepared { config, crashes, dataset, cost_input })
}

fn drive<P: Protocol>(
    protocol: &mut P,
    p: &Prepared,
    workers: usize,
    on_checkpoint: &mut dyn FnMut(&MetricsRow),
) -> std::result::Result<RunOutcome, Box<RunFailure>> {
    let fail = |error, metrics, ledger| Box::new(RunFailure { error, metrics, ledger });
    let scorer = match Scorer::new(&p.dataset, p.config.score_samples, p.config.mode_threshold, p.config.seed) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, Vec::new(), TrafficLedger::default())),
    };
    let mut net = Network::new(workers).map_err(|e| fail(e, Vec::new(), TrafficLedger::default()))?;
    let mut seen = Vec::new();
    let result = run_with_progress(
        protocol,
        &mut net,
        p.config.iterations,
        &p.crashes,
        p.config.checkpoint_stride,
        Some(&scorer),
        |row| {
            seen.push(*row);
            on_checkpoint(row);
        },
    );
    result.map_err(|e| fail(e, seen, net.ledger().clone()))
}

/// Runs the configured protocol in memory.
pub fn run_protocol(config: &ExperimentConfig) -> std::result::Result<RunArtifacts, Box<RunFailure>> {
    run_protocol_with(config, &mut |_| {})
}

pub fn run_protocol_with(
    config: &ExperimentConfig,
    on_checkpoint: &mut dyn FnMut(&MetricsRow),
) -> std::result::Result<RunArtifacts, Box<RunFailure>> {
    let early = |error| Box::new(RunFailure { error, metrics: Vec::new(), ledger: TrafficLedger::default() });
    let p = prepare(config).map_err(early)?;
    let c = &p.config;
    let (g, d) = c.architecture.build(p.dataset.dim(), c.seed).map_err(early)?;
    let period = period_iterations(p.cost_input.local_samples as usize, c.epochs, c.batch);
    let (outcome, generator_params, merges, swaps) = match c.protocol {
        ProtocolKind::Standalone => {
            let mut proto = Standalone::new(g, d, p.dataset.samples.clone(), c.batch, c.disc_steps, c.seed);
            let out = drive(&mut proto, &p, 1, on_checkpoint)?;
            (out, proto.gan.generator.net.params(), Vec::new(), 0)
        }
        ProtocolKind::Flgan => {
            let shards = shard_iid(&p.dataset, c.workers, c.seed).map_err(early)?;
            let settings = FlGanSettings { batch: c.batch, disc_steps: c.disc_steps, round_period: period };
            let mut proto =
                FlGan::new(g, d, shards.into_iter().map(|s| s.samples).collect(), settings, c.seed).map_err(early)?;
            let out = drive(&mut proto, &p, c.workers, on_checkpoint)?;
            (out, proto.generator.net.params(), proto.rounds.clone(), 0)
        }
        ProtocolKind::Mdgan => {
            let shards = shard_iid(&p.dataset, c.workers, c.seed).map_err(early)?;
            let settings = MdGanSettings {
                k: c.resolved_k(),
                batch: c.batch,
                disc_steps: c.disc_steps,
                swap_period: Some(period),
            };
            let mut proto =
                MdGan::new(g, &d, shards.into_iter().map(|s| s.samples).collect(), settings, c.seed).map_err(early)?;
            let out = drive(&mut proto, &p, c.workers, on_checkpoint)?;
            (out, proto.server.generator.net.params(), proto.merges.clone(), proto.swaps.len())
        }
    };
    let cost = analytic_costs(&p.cost_input).map_err(early)?;
    let mut predict_input = p.cost_input;
    predict_input.iterations = outcome.completed_iterations;
    let verification = predict_links(c.protocol, &predict_input, &p.crashes)
        .and_then(|predicted| verify_links(&predicted, &outcome.ledger))
        .map_err(|e| e.to_string());
    Ok(RunArtifacts { config: p.config.clone(), outcome, cost, verification, generator_params, merges, swaps })
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["iteration", "frechet", "mode_coverage", "quality_fraction"])?;
    }
    w.flush()?;
    Ok(())
}

fn write_ledger(ledger: &TrafficLedger, path: &Path) -> Result<()> {
    ledger.write_csv(BufWriter::new(File::create(path)?))
}

/// Paths of the files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentFiles {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub ledger: PathBuf,
    pub cost_text: PathBuf,
    pub cost_csv: PathBuf,
    pub verification: PathBuf,
    pub failed: PathBuf,
}

impl ExperimentFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            config: dir.join("config.toml"),
            metrics: dir.join("metrics.csv"),
            ledger: dir.join("ledger.csv"),
            cost_text: dir.join("cost_report.txt"),
            cost_csv: dir.join("cost_report.csv"),
            verification: dir.join("verification.txt"),
            failed: dir.join("FAILED"),
        }
    }
}

/// Runs `config` and writes every artifact into `out_dir`. A ledger that
/// disagrees with the cost model fails the run after the artifacts are
/// written.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    on_checkpoint: &mut dyn FnMut(&MetricsRow),
) -> Result<RunArtifacts> {
    let files = ExperimentFiles::in_dir(out_dir);
    fs::create_dir_all(out_dir)?;
    if files.failed.exists() {
        fs::remove_file(&files.failed)?;
    }
    config.validate()?;
    fs::write(&files.config, config.resolved()?.to_toml()?)?;
    match run_protocol_with(config, on_checkpoint) {
        Ok(art) => {
            write_metrics_csv(&art.outcome.metrics, &files.metrics)?;
            write_ledger(&art.outcome.ledger, &files.ledger)?;
            fs::write(&files.cost_text, art.cost.to_text())?;
            art.cost.write_csv(BufWriter::new(File::create(&files.cost_csv)?))?;
            let mut summary = format!(
                "protocol={} completed_iterations={} terminated_early={} delivered={} dropped={}\n",
                art.config.protocol.label(),
                art.outcome.completed_iterations,
                art.outcome.terminated_early,
                art.outcome.delivered,
                art.outcome.dropped
            );
            match &art.verification {
                Ok(()) => summary.push_str("ledger matches cost model\n"),
                Err(e) => summary.push_str(&format!("MISMATCH\n{e}\n")),
            }
            fs::write(&files.verification, summary)?;
            if let Err(e) = &art.verification {
                fs::write(&files.failed, e)?;
                return Err(Error::LedgerMismatch(e.clone()));
            }
            Ok(art)
        }
        Err(failure) => {
            write_metrics_csv(&failure.metrics, &files.metrics)?;
            write_ledger(&failure.ledger, &files.ledger)?;
            fs::write(&files.failed, format!("{}\n", failure.error))?;
            Err(failure.error)
        }
    }
}

/// Re-derives the expected traffic from `config.toml` in a run directory and
/// compares it with `ledger.csv`.
pub fn verify_run_dir(dir: &Path) -> Result<()> {
    let files = ExperimentFiles::in_dir(dir);
    let config = ExperimentConfig::load(&files.config)?;
    let p = prepare(&config)?;
    let predicted = predict_links(p.config.protocol, &p.cost_input, &p.crashes)?;
    let measured = read_ledger_totals(File::open(&files.ledger)?)?;
    verify_totals(&predicted, &measured)
}
