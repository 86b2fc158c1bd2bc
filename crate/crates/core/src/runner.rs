//! Orchestration behind the `oac` subcommands.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::analysis::{monte_carlo_mse, MonteCarloSpec, MseReport, Workload};
use crate::codec::{decode_numerals, encode_clipped};
use crate::config::{Derived, ExperimentConfig, Task};
use crate::error::{Error, Result};
use crate::feel::data::{load_mnist, standardize, synthetic_blobs};
use crate::feel::partition::{partition, PartitionSpec};
use crate::feel::train::{train, RoundReport};
use crate::link::oac_round;
use crate::output::ResultSink;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodecLine {
    pub value: f64,
    /// Most significant numeral first.
    pub numerals: Vec<i32>,
    pub quantized: f64,
    pub clipped: bool,
}

pub fn run_codec(cfg: &ExperimentConfig, values: &[f64]) -> Result<Vec<CodecLine>> {
    let codec = cfg.codec()?;
    values
        .iter()
        .map(|&v| {
            let (seq, clipped) = encode_clipped(&codec, v)?;
            Ok(CodecLine {
                value: v,
                quantized: decode_numerals(&codec, &seq)?,
                numerals: seq.as_slice().to_vec(),
                clipped,
            })
        })
        .collect()
}

/// Parse a gradient table: one device per line, values separated by commas
/// or whitespace. Blank lines and `#` comments are skipped.
pub fn parse_gradients(text: &str, source_name: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|e| Error::Parse {
                    source_name: source_name.to_string(),
                    message: format!("line {}: `{t}`: {e}", n + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            message: "no gradient rows".into(),
        });
    }
    if let Some(r) = rows.iter().position(|r| r.len() != rows[0].len()) {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            message: format!("device {r} has {} values, device 0 has {}", rows[r].len(), rows[0].len()),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSimRow {
    pub index: usize,
    pub estimate: f64,
    pub quantized_average: f64,
    pub true_average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSimResult {
    pub estimate: Vec<f64>,
    pub quantized_average: Vec<f64>,
    pub true_average: Vec<f64>,
    pub clipped: usize,
    pub symbols_used: usize,
}

/// One-shot aggregation of `gradients[k]`. `cfg.channel.devices` must equal the row count.
pub fn run_linksim(cfg: &ExperimentConfig, derived: Derived, gradients: &[Vec<f64>], out: &Path) -> Result<LinkSimResult> {
    let link = cfg.link_config()?;
    let o = oac_round(gradients, &link, cfg.run.seed)?;
    let rows: Vec<LinkSimRow> = (0..o.estimate.len())
        .map(|q| LinkSimRow {
            index: q,
            estimate: o.estimate[q],
            quantized_average: o.quantized_average[q],
            true_average: o.true_average[q],
        })
        .collect();
    let result = LinkSimResult {
        estimate: o.estimate,
        quantized_average: o.quantized_average,
        true_average: o.true_average,
        clipped: o.clipped,
        symbols_used: o.symbols_used,
    };
    let sink = ResultSink::create(out, cfg, derived)?;
    sink.write_csv("linksim.csv", &rows)?;
    sink.write_summary("linksim.json", "linksim", &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub param_set_id: String,
    pub theory_var: f64,
    pub emp_var: f64,
    pub emp_var_se: f64,
    pub theory_bias2: f64,
    pub emp_mse: f64,
    pub trials: usize,
    pub seed: u64,
    pub emp_mse_se: f64,
    pub theory_mse: f64,
    pub quantized_average: f64,
    pub emp_mean: f64,
    pub emp_mean_se: f64,
}

impl MseRow {
    fn new(id: &str, r: &MseReport) -> Self {
        Self {
            param_set_id: id.to_string(),
            theory_var: r.theory.variance,
            emp_var: r.estimate.var,
            emp_var_se: r.estimate.var_se,
            theory_bias2: r.theory.squared_bias,
            emp_mse: r.mse,
            trials: r.trials,
            seed: r.seed,
            emp_mse_se: r.mse_se,
            theory_mse: r.theory.mse,
            quantized_average: r.quantized_average,
            emp_mean: r.estimate.mean,
            emp_mean_se: r.estimate.mean_se,
        }
    }
}

/// Monte Carlo check of the closed-form variance and MSE for every configured case.
pub fn run_mse_verify(cfg: &ExperimentConfig, derived: Derived, out: &Path) -> Result<Vec<MseRow>> {
    let mut rows = Vec::with_capacity(cfg.mse.cases.len());
    for (i, case) in cfg.mse.cases.iter().enumerate() {
        let mut c = cfg.clone();
        c.codec.base = case.base.unwrap_or(c.codec.base);
        c.codec.digits = case.digits.unwrap_or(c.codec.digits);
        c.codec.v_max = case.v_max.unwrap_or(c.codec.v_max);
        c.channel.antennas = case.antennas.unwrap_or(c.channel.antennas);
        c.channel.snr_db = case.snr_db.unwrap_or(c.channel.snr_db);
        c.channel.devices = case
            .gradients
            .as_ref()
            .map(|g| g.len())
            .or(case.devices)
            .unwrap_or(c.channel.devices);
        c.learning.aggregation = crate::link::AggregationMode::OverTheAir;
        c.validate()?;
        let seed = rng::derive(cfg.run.seed, Domain::Profile, i as u64);
        let gradients = match &case.gradients {
            Some(g) => g.clone(),
            None => {
                let mut r = rng::stream(seed, Domain::Profile, &[]);
                let v = c.codec.v_max;
                (0..c.channel.devices).map(|_| r.random_range(-v..=v)).collect()
            }
        };
        let report = monte_carlo_mse(&MonteCarloSpec {
            link: c.link_config()?,
            workload: Workload::Gradients(gradients),
            trials: cfg.run.trials,
            seed,
            slot: None,
        })?;
        rows.push(MseRow::new(&case.id, &report));
    }
    let sink = ResultSink::create(out, cfg, derived)?;
    sink.write_csv("mse_verify.csv", &rows)?;
    sink.write_summary("mse_verify.json", "mse-verify", &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeelResult {
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub parameters: usize,
    pub rounds: usize,
    pub total_clipped: usize,
}

/// Train under `cfg` and write per-round and summary files.
pub fn run_feel(cfg: &ExperimentConfig, derived: Derived, out: &Path) -> Result<(FeelResult, Vec<RoundReport>)> {
    let seed = cfg.run.seed;
    let l = &cfg.learning;
    let (train_set, test_set) = match l.task {
        Task::Synthetic => {
            let (mut a, mut b) = synthetic_blobs(&l.blobs, rng::derive(seed, Domain::Data, 0))?;
            standardize(&mut a, &mut b);
            (a, b)
        }
        Task::Mnist => {
            let dir = l
                .mnist_dir
                .as_ref()
                .ok_or_else(|| Error::config("task `mnist` needs learning.mnist_dir"))?;
            load_mnist(dir, l.max_train, l.max_test)?
        }
    };
    let parts = partition(
        &PartitionSpec {
            mode: l.partition,
            devices: cfg.channel.devices,
        },
        train_set.labels(),
        train_set.classes(),
        rng::derive(seed, Domain::Partition, 0),
    )?;
    let report = train(&cfg.learning_config(), &train_set, &test_set, &parts, &cfg.link_config()?, seed)?;
    let result = FeelResult {
        final_accuracy: report.final_accuracy,
        final_loss: report.rounds.last().map_or(f64::NAN, |r| r.loss),
        parameters: report.parameters,
        rounds: report.rounds.len(),
        total_clipped: report.rounds.iter().map(|r| r.clipped).sum(),
    };
    let sink = ResultSink::create(out, cfg, derived)?;
    sink.write_csv("feel_rounds.csv", &report.rounds)?;
    sink.write_summary("feel_summary.json", "feel", &result)?;
    Ok((result, report.rounds))
}
