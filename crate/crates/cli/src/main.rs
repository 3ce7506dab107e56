use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdgan::config::{CrashConfig, KRule, KSetting, LogBase};
use mdgan::cost::{crossover, ingress_curve, write_ingress_csv};
use mdgan::data::{DatasetDescriptor, GaussianRingSpec};
use mdgan::experiment::verify_run_dir;
use mdgan::{analytic_costs, run_experiment, CostModelInput, ExperimentConfig, GanArchitecture, ProtocolKind};

#[derive(Parser)]
#[command(name = "mdgan", version, about = "Simulate MD-GAN, FL-GAN and standalone GAN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
    /// Print the analytic traffic and complexity report.
    Cost(CostArgs),
    /// Maximal ingress per communication as a function of the batch size.
    Ingress(IngressArgs),
    /// Check a run directory's ledger against the cost model.
    Verify {
        /// Directory written by `mdgan run`.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Standalone,
    Flgan,
    Mdgan,
}

impl From<ProtocolArg> for ProtocolKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Standalone => ProtocolKind::Standalone,
            ProtocolArg::Flgan => ProtocolKind::Flgan,
            ProtocolArg::Mdgan => ProtocolKind::Mdgan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaseArg {
    E,
    #[value(name = "2")]
    Two,
    #[value(name = "10")]
    Ten,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Integer, or `log` for floor(log N).
    #[arg(long)]
    k: Option<String>,
    #[arg(long, value_enum)]
    log_base: Option<BaseArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    disc_steps: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    checkpoint_stride: Option<u64>,
    #[arg(long)]
    score_samples: Option<usize>,
    /// Crash worker n at iteration n·I/N.
    #[arg(long)]
    crash_every: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    workers: u64,
    #[arg(long)]
    batch: u64,
    #[arg(long)]
    data_dim: u64,
    #[arg(long)]
    generator_params: u64,
    #[arg(long)]
    discriminator_params: u64,
    #[arg(long)]
    iterations: u64,
    /// Samples per worker shard (m).
    #[arg(long)]
    local_samples: u64,
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    #[arg(long, default_value_t = 1)]
    k: u64,
    #[arg(long, default_value_t = 4)]
    bytes_per_scalar: u64,
}

impl ModelArgs {
    fn input(&self) -> CostModelInput {
        CostModelInput {
            workers: self.workers,
            batch: self.batch,
            data_dim: self.data_dim,
            generator_params: self.generator_params,
            discriminator_params: self.discriminator_params,
            iterations: self.iterations,
            local_samples: self.local_samples,
            epochs: self.epochs,
            k: self.k,
            bytes_per_scalar: self.bytes_per_scalar,
        }
    }
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct IngressArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
    batches: Vec<u64>,
}

fn default_config(protocol: ProtocolKind) -> ExperimentConfig {
    ExperimentConfig {
        protocol,
        seed: 0,
        workers: 10,
        batch: 10,
        k: KSetting::Rule(KRule::Log),
        log_base: LogBase::Natural,
        epochs: 1,
        disc_steps: 1,
        iterations: 10_000,
        checkpoint_stride: 1_000,
        score_samples: mdgan::metrics::DEFAULT_SAMPLE_COUNT,
        mode_threshold: mdgan::metrics::DEFAULT_THRESHOLD,
        dataset: DatasetDescriptor::Ring(GaussianRingSpec { modes: 8, radius: 2.0, std: 0.05, samples_per_mode: 1000 }),
        crashes: CrashConfig::None,
        architecture: GanArchitecture::default(),
    }
}

fn build_config(a: &RunArgs) -> mdgan::Result<ExperimentConfig> {
    let mut c = match (&a.config, a.protocol) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => default_config(p.into()),
        (None, None) => return Err(mdgan::Error::Config("give --config or --protocol".into())),
    };
    c.seed = a.seed;
    if let Some(p) = a.protocol {
        c.protocol = p.into();
    }
    if let Some(k) = &a.k {
        c.k = match k.as_str() {
            "log" => KSetting::Rule(KRule::Log),
            n => KSetting::Fixed(n.parse().map_err(|_| mdgan::Error::Config(format!("bad k {n:?}")))?),
        };
    }
    if let Some(base) = a.log_base {
        c.log_base = match base {
            BaseArg::E => LogBase::Natural,
            BaseArg::Two => LogBase::Two,
            BaseArg::Ten => LogBase::Ten,
        };
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { c.$field = v; } )* };
    }
    set!(workers, batch, epochs, disc_steps, iterations, checkpoint_stride, score_samples);
    if a.crash_every {
        c.crashes = CrashConfig::Every;
    }
    if c.protocol == ProtocolKind::Standalone {
        c.workers = 1;
        c.k = KSetting::Fixed(1);
    }
    Ok(c)
}

fn run(a: RunArgs) -> mdgan::Result<()> {
    let config = build_config(&a)?;
    let quiet = a.quiet;
    let mut progress = |row: &mdgan::MetricsRow| {
        if !quiet {
            eprintln!(
                "iteration {:>7}  frechet {:.5}  coverage {:.3}  quality {:.3}",
                row.iteration, row.frechet, row.mode_coverage, row.quality_fraction
            );
        }
    };
    let art = run_experiment(&config, &a.out, &mut progress)?;
    println!(
        "{} finished {} iterations{}; artifacts in {}",
        art.config.protocol.label(),
        art.outcome.completed_iterations,
        if art.outcome.terminated_early { " (all workers crashed)" } else { "" },
        a.out.display()
    );
    Ok(())
}

fn cost(a: CostArgs) -> mdgan::Result<()> {
    let report = analytic_costs(&a.model.input())?;
    print!("{}", report.to_text());
    if let Some(path) = a.csv {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

fn ingress(a: IngressArgs) -> mdgan::Result<()> {
    let input = a.model.input();
    input.validate()?;
    let points = ingress_curve(&input, &a.batches)?;
    write_ingress_csv(&points, io::stdout().lock())?;
    let c = crossover(&input);
    let mut err = io::stderr().lock();
    writeln!(err, "MD-GAN exceeds FL-GAN ingress from b={} (worker) and b={} (server)", c.worker, c.server)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
        Command::Ingress(a) => ingress(a),
        Command::Verify { dir } => verify_run_dir(&dir).map(|()| println!("ledger matches cost model")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
