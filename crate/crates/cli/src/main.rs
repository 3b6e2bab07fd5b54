//! `partsynth`: data generation, training, synthesis, evaluation and serving.
//!
//! Exit status: 0 on success, 1 on internal errors, 2 on usage errors or
//! missing inputs, 3 when training diverges.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use partsynth::commands::{self, Protocol, TrainStage};
use partsynth::config::RunConfig;
use partsynth::dataset::Category;
use partsynth::pcn::PcnTrainConfig;
use partsynth::pipeline::CheckpointDir;
use partsynth::psn::Kind;
use partsynth::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "partsynth", version, about = "Part-based 3D shape synthesis")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural part dataset.
    GenData {
        #[arg(long)]
        category: Option<Category>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one stage.
    Train(TrainArgs),
    /// Grow shapes automatically or serve interactive sessions.
    Synth(SynthArgs),
    /// Compute a metric report.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        protocol: Protocol,
        /// Where to write the JSON report; defaults to the output directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Describe a suggestion checkpoint.
    PsnInfo {
        #[arg(long, conflicts_with = "checkpoint")]
        model: Option<Kind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Pcn,
    Implicit,
    Psn,
}

#[derive(Args)]
struct TrainArgs {
    stage: StageArg,
    /// Suggestion model kind (psn stage).
    #[arg(long)]
    model: Option<Kind>,
    #[arg(long)]
    epochs_joint: Option<usize>,
    #[arg(long)]
    epochs_stn: Option<usize>,
    /// Epochs for the implicit or psn stage.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
}

#[derive(Args)]
struct SynthArgs {
    /// Rounds and shape count.
    #[arg(long, num_args = 2, value_names = ["K", "N"], required_unless_present = "serve")]
    auto: Option<Vec<usize>>,
    #[arg(long, conflicts_with = "auto")]
    serve: bool,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    model: Option<Kind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(_) | Error::Json(_) => Error::InvalidArgument(format!("config {}: {e}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match cli.command {
        Command::GenData { category, count, resolution, out } => {
            if let Some(c) = category {
                cfg.data.category = c;
            }
            if let Some(n) = count {
                cfg.data.shapes = n;
            }
            if let Some(r) = resolution {
                cfg.data.resolution = r;
            }
            if let Some(o) = out {
                cfg.data.dir = o;
            }
            print(&commands::gen_data(&cfg)?)
        }
        Command::Train(a) => {
            let stage = match a.stage {
                StageArg::Pcn => TrainStage::Pcn,
                StageArg::Implicit => TrainStage::Implicit,
                StageArg::Psn => TrainStage::Psn,
            };
            if a.epochs_joint.is_some() || a.epochs_stn.is_some() || (a.lr.is_some() && matches!(stage, TrainStage::Pcn)) {
                let base = cfg.pcn_config();
                cfg.pcn = Some(PcnTrainConfig {
                    epochs_joint: a.epochs_joint.unwrap_or(base.epochs_joint),
                    epochs_stn: a.epochs_stn.unwrap_or(base.epochs_stn),
                    lr_ae: if matches!(stage, TrainStage::Pcn) { a.lr.unwrap_or(base.lr_ae) } else { base.lr_ae },
                    ..base
                });
            }
            match stage {
                TrainStage::Implicit => {
                    let mut c = cfg.implicit_config();
                    c.epochs = a.epochs.unwrap_or(c.epochs);
                    c.lr = a.lr.unwrap_or(c.lr);
                    cfg.implicit = Some(c);
                }
                TrainStage::Psn => {
                    cfg.psn.epochs = a.epochs.or(cfg.psn.epochs);
                    cfg.psn.lr = a.lr.or(cfg.psn.lr);
                }
                TrainStage::Pcn => {}
            }
            print(&commands::train(&cfg, stage, a.model)?)
        }
        Command::Synth(a) => {
            if let Some(k) = a.model {
                cfg.psn.kind = Some(k);
            }
            if a.serve {
                return commands::serve(&cfg, SocketAddr::from(([127, 0, 0, 1], a.port)));
            }
            let auto = a.auto.unwrap_or_default();
            let (rounds, n) = (auto[0], auto[1]);
            if rounds == 0 {
                return Err(Error::InvalidArgument("K must be at least 1".into()));
            }
            let out = a.out.unwrap_or_else(|| cfg.paths.output.clone());
            print(&commands::synth_auto(&cfg, rounds, n, cli.seed.unwrap_or(0), &out)?)
        }
        Command::Evaluate { gen, reference, protocol, report } => {
            let report = report.unwrap_or_else(|| cfg.paths.output.join(format!("evaluate_{}.json", protocol_name(protocol))));
            print(&commands::evaluate(&cfg, protocol, &gen, reference.as_deref(), &report)?)
        }
        Command::PsnInfo { model, checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| CheckpointDir(cfg.paths.checkpoints.clone()).psn(model.unwrap_or_else(|| cfg.psn_kind())));
            print(&commands::psn_info(&path)?)
        }
        Command::Serve(a) => commands::serve(&cfg, SocketAddr::new(a.host, a.port)),
    }
}

fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Table1 => "table1",
        Protocol::Table4 => "table4",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
