//! End-to-end aggregation link: encode, map, activate, propagate, detect, decode.

use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel, superpose_at, ChannelConfig};
use crate::codec::{encode_clipped, quantize, BalancedConfig, NumeralSequence};
use crate::detector::{aggregate, estimate_votes_with, true_votes, DetectorOptions, VoteEstimate};
use crate::error::{check_len, Error, Result};
use crate::resource::{activate, map_gradients, Cell, GridConfig, ResourceSet};
use crate::rng::{self, Domain};

/// How the server obtains the average gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Plain mean of unquantized gradients.
    Exact,
    /// Mean of quantized gradients (channel bypassed, votes known exactly).
    Quantized,
    /// Full over-the-air chain.
    #[default]
    OverTheAir,
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "ideal" => Ok(Self::Exact),
            "quantized" | "ideal_votes" | "bypass" => Ok(Self::Quantized),
            "oac" | "over_the_air" => Ok(Self::OverTheAir),
            other => Err(Error::config(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub codec: BalancedConfig,
    /// Active subcarriers per OFDM symbol, M.
    pub subcarriers: usize,
    /// Upper bound on OFDM symbols per round. `None` sizes S to fit.
    pub max_symbols: Option<usize>,
    pub channel: ChannelConfig,
    pub detector: DetectorOptions,
    pub mode: AggregationMode,
}

impl LinkConfig {
    pub fn new(codec: BalancedConfig, subcarriers: usize, channel: ChannelConfig) -> Self {
        Self {
            codec,
            subcarriers,
            max_symbols: None,
            channel,
            detector: DetectorOptions::default(),
            mode: AggregationMode::OverTheAir,
        }
    }

    pub fn with_mode(mut self, mode: AggregationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Grid for `gradients` values, honoring `max_symbols`.
    pub fn grid_for(&self, gradients: usize) -> Result<GridConfig> {
        let grid = GridConfig::for_gradients(self.subcarriers, gradients, self.codec)?;
        match self.max_symbols {
            Some(cap) if grid.symbols() > cap => Err(Error::Capacity {
                gradients,
                required_symbols: grid.symbols(),
                available_symbols: cap,
            }),
            _ => Ok(grid),
        }
    }
}

/// Geometry prepared once for a fixed gradient count.
#[derive(Debug, Clone)]
pub struct Transceiver {
    link: LinkConfig,
    grid: GridConfig,
    sets: Vec<ResourceSet>,
}

impl Transceiver {
    pub fn new(link: LinkConfig, gradients: usize) -> Result<Self> {
        link.channel.validate()?;
        let grid = link.grid_for(gradients)?;
        let sets = map_gradients(&grid, gradients)?;
        Ok(Self { link, grid, sets })
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn resource_sets(&self) -> &[ResourceSet] {
        &self.sets
    }

    /// Send `numerals[k][q]` over the air and estimate votes for the gradients in `detect`.
    ///
    /// The returned estimate is indexed by position in `detect`.
    pub fn transmit(
        &self,
        numerals: &[Vec<NumeralSequence>],
        detect: &[usize],
        seed: u64,
    ) -> Result<VoteEstimate> {
        let ch = &self.link.channel;
        check_len("devices", ch.devices, numerals.len())?;
        let cfg = self.link.codec;
        let frames = activate(&self.grid, &self.sets, numerals, rng::derive(seed, Domain::Phase, 0))?;
        let chan = draw_channel(ch, rng::derive(seed, Domain::Fading, 0))?;
        let mut cells: Vec<Cell> = Vec::with_capacity(detect.len() * cfg.cells_per_value());
        for &q in detect {
            let set = self.sets.get(q).ok_or_else(|| {
                Error::domain(format!("gradient {q} is not mapped onto the grid"))
            })?;
            cells.extend_from_slice(set.cells());
        }
        let obs = superpose_at(&frames, &chan, ch, &cells, rng::derive(seed, Domain::Noise, 0))?;

        let es = cfg.symbol_energy();
        let nz = cfg.nonzero_symbols();
        let mut votes = VoteEstimate::zeros(detect.len(), cfg.digits(), nz);
        let mut ys = Vec::with_capacity(nz);
        for j in 0..detect.len() {
            for i in 0..cfg.digits() {
                let first = j * cfg.cells_per_value() + i * nz;
                ys.clear();
                ys.extend((first..first + nz).map(|c| obs.get(c)));
                let est = estimate_votes_with(&ys, es, ch.noise_var, ch.antennas, ch.devices, &self.link.detector);
                votes.cell_votes_mut(j, i).copy_from_slice(&est);
            }
        }
        Ok(votes)
    }
}

/// Result of aggregating one round of gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOutput {
    /// What the server broadcasts, `ĝ`.
    pub estimate: Vec<f64>,
    /// Mean of the devices' quantized gradients.
    pub quantized_average: Vec<f64>,
    /// Mean of the raw gradients, `ḡ`.
    pub true_average: Vec<f64>,
    /// Gradient entries that exceeded `±v_max` and were clipped.
    pub clipped: usize,
    /// OFDM symbols used (0 when the channel is bypassed).
    pub symbols_used: usize,
}

/// Encode every device's gradients; returns `numerals[k][q]` and the clip count.
pub fn encode_gradients(
    cfg: &BalancedConfig,
    gradients: &[Vec<f64>],
) -> Result<(Vec<Vec<NumeralSequence>>, usize)> {
    let mut clipped = 0;
    let numerals = gradients
        .iter()
        .map(|g| {
            g.iter()
                .map(|&v| {
                    let (s, c) = encode_clipped(cfg, v)?;
                    clipped += c as usize;
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((numerals, clipped))
}

fn column_means(gradients: &[Vec<f64>], f: impl Fn(f64) -> Result<f64>) -> Result<Vec<f64>> {
    let q = gradients[0].len();
    let mut acc = vec![0.0; q];
    for g in gradients {
        for (a, &v) in acc.iter_mut().zip(g) {
            *a += f(v)?;
        }
    }
    let k = gradients.len() as f64;
    Ok(acc.into_iter().map(|s| s / k).collect())
}

/// Aggregate one round. `gradients[k]` is device `k`'s gradient vector.
pub fn oac_round(gradients: &[Vec<f64>], link: &LinkConfig, seed: u64) -> Result<LinkOutput> {
    let k = gradients.len();
    if k == 0 {
        return Err(Error::domain("at least one device must contribute"));
    }
    check_len("devices", link.channel.devices, k)?;
    let q = gradients[0].len();
    for g in gradients {
        check_len("gradient length", q, g.len())?;
    }
    let cfg = link.codec;
    let true_average = column_means(gradients, Ok)?;
    let quantized_average = column_means(gradients, |v| quantize(&cfg, v))?;
    let (numerals, clipped) = encode_gradients(&cfg, gradients)?;

    let (estimate, symbols_used) = match link.mode {
        AggregationMode::Exact => (true_average.clone(), 0),
        AggregationMode::Quantized => {
            let votes = true_votes(&cfg, &numerals)?;
            (aggregate(&votes, &cfg, k)?.values, 0)
        }
        AggregationMode::OverTheAir => {
            let trx = Transceiver::new(*link, q)?;
            let all: Vec<usize> = (0..q).collect();
            let votes = trx.transmit(&numerals, &all, seed)?;
            (aggregate(&votes, &cfg, k)?.values, trx.grid().symbols())
        }
    };
    Ok(LinkOutput {
        estimate,
        quantized_average,
        true_average,
        clipped,
        symbols_used,
    })
}
