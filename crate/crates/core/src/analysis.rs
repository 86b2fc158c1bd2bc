//! Closed-form error analysis of the aggregation estimator and the Monte
//! Carlo harness that checks it.
//!
//! With `K̂_ℓ` unbiased and `Var[K̂_ℓ] = (K_ℓ + σ²/E_s)² / R`, the scalar
//! estimate `ĝ = v_max/ξ Σ_i β^i (1/K) Σ_ℓ a_ℓ K̂_ℓ^{(i)}` has
//!
//! ```text
//! Var[ĝ] = v_max² / (ξ² R K²) · Σ_i Σ_ℓ a_ℓ² (K_ℓ^{(i)} + σ²/E_s)² β^{2i}
//! ```
//!
//! and its MSE against the true mean adds the squared quantization bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel, superpose_at, ChannelConfig};
use crate::codec::{decode, encode, quantize, BalancedConfig, NumeralSequence};
use crate::detector::{aggregate, estimate_votes, true_votes};
use crate::error::{Error, Result};
use crate::link::{AggregationMode, LinkConfig, Transceiver};
use crate::resource::{ActivationFrame, Cell};
use crate::rng::{self, Domain};
use crate::stats::{self, Moments};

/// Fewest trials a Monte Carlo run accepts.
pub const MIN_TRIALS: usize = 1000;

/// `Var[K̂_ℓ] = (K_ℓ + σ²/E_s)² / R`.
pub fn var_vote(votes: f64, noise_var: f64, symbol_energy: f64, antennas: usize) -> f64 {
    (votes + noise_var / symbol_energy).powi(2) / antennas as f64
}

/// Everything the closed form needs for one gradient index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub codec: BalancedConfig,
    pub antennas: usize,
    pub devices: usize,
    pub noise_var: f64,
    pub symbol_energy: f64,
    /// `votes[i][ℓ]`: devices sending `a_ℓ` at position `i` (0 = least significant).
    pub votes: Vec<Vec<f64>>,
    /// Per-device raw values (equal to `quantized` for numeral workloads).
    pub true_values: Vec<f64>,
    pub quantized_values: Vec<f64>,
}

impl TheoryInputs {
    pub fn from_gradients(codec: BalancedConfig, channel: &ChannelConfig, gradients: &[f64]) -> Result<Self> {
        let numerals = gradients
            .iter()
            .map(|&g| encode(&codec, g))
            .collect::<Result<Vec<_>>>()?;
        let quantized = gradients
            .iter()
            .map(|&g| quantize(&codec, g))
            .collect::<Result<Vec<_>>>()?;
        let mut t = Self::from_numerals(codec, channel, &numerals)?;
        t.true_values = gradients.to_vec();
        t.quantized_values = quantized;
        Ok(t)
    }

    pub fn from_numerals(codec: BalancedConfig, channel: &ChannelConfig, numerals: &[NumeralSequence]) -> Result<Self> {
        if numerals.len() != channel.devices {
            return Err(Error::Shape {
                what: "devices",
                expected: channel.devices,
                actual: numerals.len(),
            });
        }
        let per_dev: Vec<Vec<NumeralSequence>> = numerals.iter().map(|s| vec![s.clone()]).collect();
        let tv = true_votes(&codec, &per_dev)?;
        let votes = (0..codec.digits()).map(|i| tv.cell_votes(0, i).to_vec()).collect();
        let quantized = numerals
            .iter()
            .map(|s| decode(&codec, &s.to_reals()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            codec,
            antennas: channel.antennas,
            devices: channel.devices,
            noise_var: channel.noise_var,
            symbol_energy: codec.symbol_energy(),
            votes,
            true_values: quantized.clone(),
            quantized_values: quantized,
        })
    }

    fn symbols(&self) -> Vec<f64> {
        self.codec.symbol_set().nonzero().iter().map(|&a| a as f64).collect()
    }

    /// Mean of the devices' quantized values, the estimator's expectation.
    pub fn quantized_average(&self) -> f64 {
        self.quantized_values.iter().sum::<f64>() / self.devices as f64
    }

    pub fn true_average(&self) -> f64 {
        self.true_values.iter().sum::<f64>() / self.devices as f64
    }
}

/// `Var[μ̂_i] = 1/(R K²) Σ_ℓ a_ℓ² (K_ℓ + σ²/E_s)²` for position `i`.
pub fn var_numeral_mean(inputs: &TheoryInputs, position: usize) -> f64 {
    let k = inputs.devices as f64;
    let s = inputs.noise_var / inputs.symbol_energy;
    inputs
        .symbols()
        .iter()
        .zip(&inputs.votes[position])
        .map(|(a, kl)| a * a * (kl + s).powi(2))
        .sum::<f64>()
        / (inputs.antennas as f64 * k * k)
}

/// Variance of the scalar estimate `ĝ`.
pub fn var_gradient_estimate(inputs: &TheoryInputs) -> f64 {
    let xi = inputs.codec.bias() as f64;
    let scale = (inputs.codec.v_max() / xi).powi(2);
    (0..inputs.codec.digits())
        .map(|i| var_numeral_mean(inputs, i) * inputs.codec.weight(i).powi(2))
        .sum::<f64>()
        * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown {
    pub variance: f64,
    pub squared_bias: f64,
    pub mse: f64,
}

/// Variance plus squared quantization bias `((1/K) Σ_k (q_k - g_k))²`.
pub fn mse_gradient_estimate(inputs: &TheoryInputs) -> MseBreakdown {
    let variance = var_gradient_estimate(inputs);
    let bias = inputs
        .quantized_values
        .iter()
        .zip(&inputs.true_values)
        .map(|(q, g)| q - g)
        .sum::<f64>()
        / inputs.devices as f64;
    let squared_bias = bias * bias;
    MseBreakdown {
        variance,
        squared_bias,
        mse: variance + squared_bias,
    }
}

/// What the devices send, fixed across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    /// One raw value per device.
    Gradients(Vec<f64>),
    /// One numeral sequence per device.
    Numerals(Vec<NumeralSequence>),
}

/// Monte Carlo run of the full chain for a single gradient index.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSpec {
    pub link: LinkConfig,
    pub workload: Workload,
    pub trials: usize,
    pub seed: u64,
    /// Gradient slot carrying the workload; `None` picks the last slot of the
    /// first OFDM symbol, where timing rotations are largest.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub theory: MseBreakdown,
    /// Expectation of the estimator (mean of quantized values).
    pub quantized_average: f64,
    pub true_average: f64,
    pub estimate: Moments,
    /// Empirical `E[(ĝ - ḡ)²]` and its standard error.
    pub mse: f64,
    pub mse_se: f64,
    pub trials: usize,
    pub seed: u64,
}

impl MseReport {
    /// Distance of the empirical mean from the quantized average, in standard errors.
    pub fn bias_z_score(&self) -> f64 {
        (self.estimate.mean - self.quantized_average) / self.estimate.mean_se
    }
}

/// Run the chain `trials` times with fresh phases, channels and noise.
///
/// Trials run in parallel; each draws only from streams keyed by its own
/// trial seed, so the samples (and the report) do not depend on scheduling.
pub fn monte_carlo_samples(spec: &MonteCarloSpec) -> Result<(TheoryInputs, Vec<f64>)> {
    if spec.trials < MIN_TRIALS {
        return Err(Error::domain(format!(
            "Monte Carlo needs at least {MIN_TRIALS} trials (got {})",
            spec.trials
        )));
    }
    let codec = spec.link.codec;
    let ch = spec.link.channel;
    let inputs = match &spec.workload {
        Workload::Gradients(g) => TheoryInputs::from_gradients(codec, &ch, g)?,
        Workload::Numerals(n) => TheoryInputs::from_numerals(codec, &ch, n)?,
    };
    let numerals: Vec<NumeralSequence> = match &spec.workload {
        Workload::Gradients(g) => g.iter().map(|&v| encode(&codec, v)).collect::<Result<_>>()?,
        Workload::Numerals(n) => n.clone(),
    };

    let samples = match spec.link.mode {
        AggregationMode::Exact => vec![inputs.true_average(); spec.trials],
        AggregationMode::Quantized => {
            let per_dev: Vec<Vec<NumeralSequence>> = numerals.iter().map(|s| vec![s.clone()]).collect();
            let v = aggregate(&true_votes(&codec, &per_dev)?, &codec, ch.devices)?.values[0];
            vec![v; spec.trials]
        }
        AggregationMode::OverTheAir => {
            let probe = spec.link.grid_for(1)?;
            let slot = spec.slot.unwrap_or(probe.gradients_per_symbol() - 1);
            let trx = Transceiver::new(spec.link, slot + 1)?;
            let zero = NumeralSequence::new(&codec, vec![0; codec.digits()])?;
            let per_dev: Vec<Vec<NumeralSequence>> = numerals
                .iter()
                .map(|s| {
                    let mut v = vec![zero.clone(); slot + 1];
                    v[slot] = s.clone();
                    v
                })
                .collect();
            (0..spec.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let seed = rng::derive(spec.seed, Domain::Trial, t);
                    let votes = trx.transmit(&per_dev, &[slot], seed)?;
                    Ok(aggregate(&votes, &codec, ch.devices)?.values[0])
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    Ok((inputs, samples))
}

pub fn monte_carlo_mse(spec: &MonteCarloSpec) -> Result<MseReport> {
    let (inputs, samples) = monte_carlo_samples(spec)?;
    let theory = mse_gradient_estimate(&inputs);
    let estimate = stats::moments(&samples);
    let (mse, mse_se) = stats::mean_squared_error(&samples, inputs.true_average());
    Ok(MseReport {
        theory,
        quantized_average: inputs.quantized_average(),
        true_average: inputs.true_average(),
        estimate,
        mse,
        mse_se,
        trials: spec.trials,
        seed: spec.seed,
    })
}

/// Monte Carlo of a single vote estimate `K̂` with `votes` devices on one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteMcSpec {
    /// `devices` must be at least `votes`; the extra devices stay silent.
    pub channel: ChannelConfig,
    pub votes: usize,
    pub symbol_energy: f64,
    pub subcarrier: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteMcReport {
    pub votes: usize,
    pub antennas: usize,
    pub moments: Moments,
    pub theory_var: f64,
}

pub fn monte_carlo_votes(spec: &VoteMcSpec) -> Result<VoteMcReport> {
    if spec.trials < MIN_TRIALS {
        return Err(Error::domain(format!(
            "Monte Carlo needs at least {MIN_TRIALS} trials (got {})",
            spec.trials
        )));
    }
    let ch = spec.channel;
    if spec.votes > ch.devices {
        return Err(Error::domain("more votes than devices"));
    }
    let cell = Cell::new(0, spec.subcarrier);
    let amp = spec.symbol_energy.sqrt();
    let samples = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive(spec.seed, Domain::Trial, t);
            let frames: Vec<ActivationFrame> = (0..ch.devices)
                .map(|k| ActivationFrame {
                    device: k,
                    entries: if k < spec.votes {
                        let mut s = rng::stream(seed, Domain::Phase, &[k as u64]);
                        vec![(cell, rng::unit_phase(&mut s) * amp)]
                    } else {
                        Vec::new()
                    },
                })
                .collect();
            let chan = draw_channel(&ch, rng::derive(seed, Domain::Fading, 0))?;
            let obs = superpose_at(&frames, &chan, &ch, &[cell], rng::derive(seed, Domain::Noise, 0))?;
            Ok(estimate_votes(&[obs.get(0)], spec.symbol_energy, ch.noise_var, ch.antennas)[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(VoteMcReport {
        votes: spec.votes,
        antennas: ch.antennas,
        moments: stats::moments(&samples),
        theory_var: var_vote(spec.votes as f64, ch.noise_var, spec.symbol_energy, ch.antennas),
    })
}
