use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use graffl::experiment::{self, ExperimentConfig, TransportKind};
use graffl::Error;

#[derive(Parser)]
#[command(name = "graffl", version, about = "Federated ABC for Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Inprocess,
    Socket,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        transport: Option<Transport>,
        /// Act as the coordinator and wait for sites on this address.
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        /// Act as a site and connect to the coordinator at this address.
        #[arg(long, requires = "site_id")]
        connect: Option<String>,
        #[arg(long)]
        site_id: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::MissingColumn(_) | Error::InvalidHyperparameter(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> graffl::Result<()> {
    let Command::Run {
        config,
        out,
        seed,
        transport,
        listen,
        connect,
        site_id,
    } = cli.command;
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = transport {
        cfg.transport.kind = match t {
            Transport::Inprocess => TransportKind::Inprocess,
            Transport::Socket => TransportKind::Socket,
        };
    }
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("graffl-out"));
    if (listen.is_some() || connect.is_some()) && cfg.transport.kind != TransportKind::Socket {
        return Err(Error::Config("--listen and --connect need --transport socket".into()));
    }
    if let Some(addr) = listen {
        let output = experiment::run_coordinator(&cfg, &addr, &out_dir)?;
        eprintln!("coordinator finished: epsilon = {}", output.posterior.epsilon);
    } else if let Some(addr) = connect {
        let site = site_id.ok_or_else(|| Error::Config("--connect needs --site-id".into()))?;
        let stats = experiment::run_site_process(&cfg, &addr, site)?;
        eprintln!("site {site} served {} batches", stats.batches);
    } else {
        let output = experiment::run_experiment(&cfg, &out_dir)?;
        eprintln!(
            "{} finished: epsilon = {}, outputs in {}",
            output.scenario.name(),
            output.posterior.epsilon,
            out_dir.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
