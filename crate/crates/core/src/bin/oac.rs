//! `oac` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use oac_core::config::{load_config, Derived, ExperimentConfig, Task};
use oac_core::feel::PartitionMode;
use oac_core::link::AggregationMode;
use oac_core::runner;
use oac_core::{Error, Result};

#[derive(Parser)]
#[command(name = "oac", version, about = "Over-the-air computation with balanced numerals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML, JSON, or a summary JSON from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base: Option<u32>,
    #[arg(long)]
    digits: Option<u32>,
    #[arg(long = "vmax")]
    v_max: Option<f64>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long = "n-err", allow_hyphen_values = true)]
    n_err: Option<f64>,
    /// Fading model: iid_flat | epa_tdl.
    #[arg(long)]
    fading: Option<String>,
    /// Aggregation: oac | quantized | exact.
    #[arg(long)]
    aggregation: Option<String>,
    /// Bypass the channel and detect votes exactly (same as `--aggregation quantized`).
    #[arg(long = "ideal-link")]
    ideal_link: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Encode values and print one JSON line per value.
    Codec {
        #[command(flatten)]
        common: Common,
        #[arg(allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
    },
    /// Aggregate one gradient table (one device per line) over the link.
    Linksim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gradients: PathBuf,
    },
    /// Compare closed-form variance and MSE with Monte Carlo.
    MseVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Federated training over the simulated link.
    Feel {
        #[command(flatten)]
        common: Common,
        /// homo | hetero
        #[arg(long)]
        partition: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        /// mnist | synthetic
        #[arg(long)]
        task: Option<String>,
        #[arg(long = "mnist-dir")]
        mnist_dir: Option<PathBuf>,
    },
    /// Print the resolved config and its derived quantities.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?.0,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(common.seed => cfg.run.seed);
    set!(common.base => cfg.codec.base);
    set!(common.digits => cfg.codec.digits);
    set!(common.v_max => cfg.codec.v_max);
    set!(common.devices => cfg.channel.devices);
    set!(common.antennas => cfg.channel.antennas);
    set!(common.snr_db => cfg.channel.snr_db);
    set!(common.n_err => cfg.channel.n_err);
    if let Some(f) = &common.fading {
        cfg.channel.model = f.parse()?;
    }
    if let Some(a) = &common.aggregation {
        cfg.learning.aggregation = a.parse()?;
    }
    if common.ideal_link {
        cfg.learning.aggregation = AggregationMode::Quantized;
    }
    Ok(cfg)
}

fn finish(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, Derived)> {
    let derived = cfg.validate()?;
    Ok((cfg.clone(), derived))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Codec { common, values } => {
            let (cfg, _) = finish(&resolve(&common)?)?;
            for line in runner::run_codec(&cfg, &values)? {
                print_json(&line)?;
            }
        }
        Command::Linksim { common, gradients } => {
            let text = std::fs::read_to_string(&gradients).map_err(|e| Error::Parse {
                source_name: gradients.display().to_string(),
                message: e.to_string(),
            })?;
            let table = runner::parse_gradients(&text, &gradients.display().to_string())?;
            let mut cfg = resolve(&common)?;
            match common.devices {
                Some(k) if k != table.len() => {
                    return Err(Error::Config(format!(
                        "--devices {k} disagrees with {} rows in {}",
                        table.len(),
                        gradients.display()
                    )))
                }
                _ => cfg.channel.devices = table.len(),
            }
            let (cfg, derived) = finish(&cfg)?;
            let res = runner::run_linksim(&cfg, derived, &table, &cfg.output_dir())?;
            print_json(&res)?;
        }
        Command::MseVerify { common, trials } => {
            let mut cfg = resolve(&common)?;
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            let (cfg, derived) = finish(&cfg)?;
            for row in runner::run_mse_verify(&cfg, derived, &cfg.output_dir())? {
                print_json(&row)?;
            }
        }
        Command::Feel {
            common,
            partition,
            rounds,
            task,
            mnist_dir,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(p) = partition {
                cfg.learning.partition = p.parse::<PartitionMode>()?;
            }
            if let Some(r) = rounds {
                cfg.learning.rounds = r;
            }
            if let Some(t) = task {
                cfg.learning.task = t.parse::<Task>()?;
            }
            if mnist_dir.is_some() {
                cfg.learning.mnist_dir = mnist_dir;
            }
            let (cfg, derived) = finish(&cfg)?;
            let (res, _) = runner::run_feel(&cfg, derived, &cfg.output_dir())?;
            print_json(&res)?;
        }
        Command::ShowConfig { common } => {
            let (cfg, derived) = finish(&resolve(&common)?)?;
            print_json(&json!({ "config_hash": cfg.hash(), "config": cfg, "derived": derived }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!(
                "{}",
                json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code })
            );
            ExitCode::from(code as u8)
        }
    }
}
