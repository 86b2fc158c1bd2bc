//! Non-coherent vote detection and aggregation.
//!
//! On the cell of symbol `a_ℓ` the received vector is CN(0, (E_s K_ℓ + σ²) I_R),
//! where `K_ℓ` counts the devices that sent `a_ℓ`. The receiver only needs
//! the cell energy to estimate `K_ℓ`; no channel knowledge is used.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, index_of_symbol, BalancedConfig, NumeralSequence};
use crate::error::{check_len, Error, Result};

/// Largest number of hypotheses [`ml_votes_exact`] will enumerate.
pub const ML_SEARCH_LIMIT: u128 = 20_000_000;

/// Receiver-side knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorOptions {
    /// Clamp every vote estimate to `[0, K]`. Biases the estimator.
    pub clamp_votes: bool,
    /// Multiplier on the noise variance assumed by the receiver (1 = perfect knowledge).
    pub noise_var_bias: f64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self {
            clamp_votes: false,
            noise_var_bias: 1.0,
        }
    }
}

fn energy(y: &[Complex64]) -> f64 {
    y.iter().map(|v| v.norm_sqr()).sum()
}

/// Relaxed estimate `K̂_ℓ = ||y_ℓ||² / (E_s R) - σ²/E_s` for each cell.
pub fn estimate_votes(y_cells: &[&[Complex64]], es: f64, noise_var: f64, antennas: usize) -> Vec<f64> {
    y_cells
        .iter()
        .map(|y| energy(y) / (es * antennas as f64) - noise_var / es)
        .collect()
}

/// [`estimate_votes`] with the receiver options applied.
pub fn estimate_votes_with(
    y_cells: &[&[Complex64]],
    es: f64,
    noise_var: f64,
    antennas: usize,
    devices: usize,
    opts: &DetectorOptions,
) -> Vec<f64> {
    let mut v = estimate_votes(y_cells, es, noise_var * opts.noise_var_bias, antennas);
    if opts.clamp_votes {
        v.iter_mut().for_each(|x| *x = x.clamp(0.0, devices as f64));
    }
    v
}

/// Negative log-likelihood (up to constants) of one cell with energy `energy`
/// under hypothesis `kappa` votes: `2R ln((E_s κ + σ²)/2) + 2||y||²/(E_s κ + σ²)`.
pub fn cell_neg_log_likelihood(energy: f64, es: f64, noise_var: f64, antennas: usize, kappa: f64) -> f64 {
    let c = es * kappa + noise_var;
    let r = antennas as f64;
    if c <= 0.0 {
        return if energy == 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    2.0 * r * (c / 2.0).ln() + 2.0 * energy / c
}

/// Joint objective of the exact detector for one digit.
pub fn ml_objective(y_cells: &[&[Complex64]], es: f64, noise_var: f64, antennas: usize, kappa: &[f64]) -> f64 {
    y_cells
        .iter()
        .zip(kappa)
        .map(|(y, &k)| cell_neg_log_likelihood(energy(y), es, noise_var, antennas, k))
        .sum()
}

/// Exhaustive maximum-likelihood vote counts for one digit.
///
/// Searches `κ_ℓ ∈ {0..K}` with `Σ κ_ℓ ≤ K`. Ties go to the smaller total,
/// then to the lexicographically smaller vector.
pub fn ml_votes_exact(
    y_cells: &[&[Complex64]],
    es: f64,
    noise_var: f64,
    antennas: usize,
    devices: usize,
) -> Result<Vec<u32>> {
    let n = y_cells.len();
    let hypotheses = (devices as u128 + 1)
        .checked_pow(n as u32)
        .unwrap_or(u128::MAX);
    if hypotheses > ML_SEARCH_LIMIT {
        return Err(Error::SearchTooLarge {
            hypotheses,
            limit: ML_SEARCH_LIMIT,
        });
    }
    // The objective is separable, so tabulate each cell's cost once.
    let costs: Vec<Vec<f64>> = y_cells
        .iter()
        .map(|y| {
            let e = energy(y);
            (0..=devices)
                .map(|k| cell_neg_log_likelihood(e, es, noise_var, antennas, k as f64))
                .collect()
        })
        .collect();

    let mut best: Option<(f64, u32, Vec<u32>)> = None;
    let mut kappa = vec![0u32; n];
    loop {
        let total: u32 = kappa.iter().sum();
        if total as usize <= devices {
            let obj: f64 = kappa
                .iter()
                .zip(&costs)
                .map(|(&k, c)| c[k as usize])
                .sum();
            let better = match &best {
                None => true,
                Some((bo, bt, bk)) => {
                    obj < *bo || (obj == *bo && (total < *bt || (total == *bt && kappa < *bk)))
                }
            };
            if better {
                best = Some((obj, total, kappa.clone()));
            }
        }
        // odometer increment, last index fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.map(|b| b.2).unwrap_or_default());
            }
            pos -= 1;
            if (kappa[pos] as usize) < devices {
                kappa[pos] += 1;
                break;
            }
            kappa[pos] = 0;
        }
    }
}

/// Vote counts per (gradient q, digit position i, symbol index ℓ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEstimate {
    gradients: usize,
    digits: usize,
    symbols: usize,
    values: Vec<f64>,
}

impl VoteEstimate {
    pub fn zeros(gradients: usize, digits: usize, symbols: usize) -> Self {
        Self {
            gradients,
            digits,
            symbols,
            values: vec![0.0; gradients * digits * symbols],
        }
    }

    pub fn gradients(&self) -> usize {
        self.gradients
    }

    pub fn digits(&self) -> usize {
        self.digits
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    fn offset(&self, q: usize, i: usize) -> usize {
        (q * self.digits + i) * self.symbols
    }

    /// Estimates `K̂_0 … K̂_{β-2}` of gradient `q`, position `i`.
    pub fn cell_votes(&self, q: usize, i: usize) -> &[f64] {
        let o = self.offset(q, i);
        &self.values[o..o + self.symbols]
    }

    pub fn cell_votes_mut(&mut self, q: usize, i: usize) -> &mut [f64] {
        let o = self.offset(q, i);
        &mut self.values[o..o + self.symbols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `a·self + b·other`, for linearity checks and averaging.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_len("vote estimate size", self.values.len(), other.values.len())?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            ..self.clone()
        })
    }
}

/// Ground-truth vote counts of `numerals[k][q]`.
pub fn true_votes(cfg: &BalancedConfig, numerals: &[Vec<NumeralSequence>]) -> Result<VoteEstimate> {
    let q_count = numerals.first().map_or(0, |v| v.len());
    let d = cfg.digits();
    let mut votes = VoteEstimate::zeros(q_count, d, cfg.nonzero_symbols());
    for per_dev in numerals {
        check_len("gradients per device", q_count, per_dev.len())?;
        for (q, seq) in per_dev.iter().enumerate() {
            check_len("numeral sequence length", d, seq.len())?;
            for i in 0..d {
                let x = seq.at_position(i);
                if x != 0 {
                    votes.cell_votes_mut(q, i)[index_of_symbol(cfg.base(), x)?] += 1.0;
                }
            }
        }
    }
    Ok(votes)
}

/// Numeral averages and scalar estimates for every gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEstimate {
    /// `μ̂_q`, most significant position first (ready for [`decode`]).
    pub numeral_means: Vec<Vec<f64>>,
    /// `ĝ_q = decode(μ̂_q)`.
    pub values: Vec<f64>,
}

/// `μ̂_{q,i} = (1/K) Σ_ℓ a_ℓ K̂_ℓ` and `ĝ_q = decode(μ̂_q)`.
pub fn aggregate(votes: &VoteEstimate, cfg: &BalancedConfig, devices: usize) -> Result<AggregateEstimate> {
    check_len("vote digits", cfg.digits(), votes.digits)?;
    check_len("vote symbols", cfg.nonzero_symbols(), votes.symbols)?;
    if devices == 0 {
        return Err(Error::domain("device count must be positive"));
    }
    let set = cfg.symbol_set();
    let symbols = set.nonzero();
    let k = devices as f64;
    let d = cfg.digits();
    let mut numeral_means = Vec::with_capacity(votes.gradients);
    let mut values = Vec::with_capacity(votes.gradients);
    for q in 0..votes.gradients {
        let mu: Vec<f64> = (0..d)
            .rev()
            .map(|i| {
                votes
                    .cell_votes(q, i)
                    .iter()
                    .zip(symbols)
                    .map(|(kh, &a)| a as f64 * kh)
                    .sum::<f64>()
                    / k
            })
            .collect();
        values.push(decode(cfg, &mu)?);
        numeral_means.push(mu);
    }
    Ok(AggregateEstimate {
        numeral_means,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{average_numerals, encode, quantize};
    use crate::rng::{self, Domain};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn zero_energy_gives_negative_estimate() {
        let y = [c(0.0)];
        assert_eq!(estimate_votes(&[&y], 4.0, 1.0, 1), vec![-0.25]);
    }

    #[test]
    fn noiseless_energy_recovers_count() {
        let y = [Complex64::new(3.0, 4.0)]; // energy 25 = E_s·K with E_s = 5
        assert_eq!(estimate_votes(&[&y], 5.0, 0.0, 1), vec![5.0]);
    }

    #[test]
    fn options_clamp_and_bias() {
        let y = [c(0.0)];
        let o = DetectorOptions {
            clamp_votes: true,
            ..Default::default()
        };
        assert_eq!(estimate_votes_with(&[&y], 4.0, 1.0, 1, 3, &o), vec![0.0]);
        let y = [c(10.0)];
        assert_eq!(estimate_votes_with(&[&y], 4.0, 0.0, 1, 3, &o), vec![3.0]);
        let o = DetectorOptions {
            noise_var_bias: 2.0,
            ..Default::default()
        };
        assert_eq!(estimate_votes_with(&[&[c(0.0)]], 4.0, 1.0, 1, 3, &o), vec![-0.5]);
    }

    #[test]
    fn monte_carlo_moments_of_vote_estimate() {
        // K_ℓ = 2, σ² = 0.01, E_s = 4, R = 25: y ~ CN(0, (E_s K + σ²) I_R)
        let (kl, nv, es, r) = (2.0, 0.01, 4.0, 25usize);
        let n = 1_000_000u64;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut y = vec![Complex64::default(); r];
        for t in 0..n {
            let mut g = rng::stream(3, Domain::Trial, &[t]);
            y.iter_mut().for_each(|v| *v = rng::complex_normal(&mut g, es * kl + nv));
            let k = estimate_votes(&[&y], es, nv, r)[0];
            s1 += k;
            s2 += k * k;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 2.0).abs() < 0.002, "mean {mean}");
        let theory = (2.0f64 + 0.0025).powi(2) / 25.0;
        assert!((theory - 0.160_400_25).abs() < 1e-9);
        assert!((var / theory - 1.0).abs() < 0.01, "var {var} vs {theory}");
    }

    #[test]
    fn ml_zero_observation_selects_no_votes() {
        let y = [c(0.0), c(0.0)];
        let cells: Vec<&[Complex64]> = vec![&y[..1], &y[1..]];
        assert_eq!(ml_votes_exact(&cells, 4.0, 0.1, 1, 5).unwrap(), vec![0, 0]);
    }

    #[test]
    fn ml_respects_total_constraint() {
        // both cells look like 3 votes, but only K = 4 devices exist
        let a = [c((4.0f64 * 3.0).sqrt())];
        let b = a;
        let cells: Vec<&[Complex64]> = vec![&a, &b];
        let v = ml_votes_exact(&cells, 4.0, 0.01, 1, 4).unwrap();
        assert!(v.iter().sum::<u32>() <= 4);
        let unconstrained = ml_votes_exact(&cells, 4.0, 0.01, 1, 10).unwrap();
        assert_eq!(unconstrained, vec![3, 3]);
    }

    #[test]
    fn ml_tie_break_prefers_smaller_total_then_lexicographic() {
        // identical cells: symmetric objective, so lexicographic order decides
        let a = [c(2.0)];
        let cells: Vec<&[Complex64]> = vec![&a, &a];
        let v = ml_votes_exact(&cells, 4.0, 0.01, 1, 1).unwrap();
        assert_eq!(v, vec![0, 1]);
    }

    #[test]
    fn ml_search_limit() {
        let a = [c(1.0)];
        let cells: Vec<&[Complex64]> = vec![&a; 8];
        assert!(matches!(
            ml_votes_exact(&cells, 4.0, 0.1, 1, 50),
            Err(Error::SearchTooLarge { .. })
        ));
    }

    #[test]
    fn relaxed_estimate_is_stationary_point_of_cell_likelihood() {
        for &(e, es, nv, r) in &[(37.0f64, 4.0, 0.01, 8usize), (3.0, 2.0, 0.5, 1), (500.0, 6.0, 1.0, 25)] {
            let y = [Complex64::new(e.sqrt(), 0.0)];
            let k = estimate_votes(&[&y], es, nv, r)[0];
            let f = |x: f64| cell_neg_log_likelihood(e, es, nv, r, x);
            let h = 1e-5 * k.abs().max(1.0);
            let deriv = (f(k + h) - f(k - h)) / (2.0 * h);
            assert!(deriv.abs() < 1e-5 * f(k).abs().max(1.0), "derivative {deriv}");
            assert!(f(k) <= f(k + 0.1) && f(k) <= f(k - 0.1));
        }
    }

    #[test]
    fn aggregate_example_three() {
        let cfg = BalancedConfig::new(5, 3, 1.0).unwrap();
        let numerals = vec![
            vec![encode(&cfg, 0.28).unwrap()],
            vec![encode(&cfg, -0.86).unwrap()],
        ];
        let votes = true_votes(&cfg, &numerals).unwrap();
        // both devices send 2 at position 0, and 2 is symbol index 2 in the order 1,-1,2,-2
        assert_eq!(votes.cell_votes(0, 0), &[0.0, 0.0, 2.0, 0.0]);
        let agg = aggregate(&votes, &cfg, 2).unwrap();
        assert_eq!(agg.numeral_means[0], vec![-0.5, -1.5, 2.0]);
        assert!((agg.values[0] + 18.0 / 62.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_of_zero_votes_is_zero() {
        let cfg = BalancedConfig::new(5, 2, 1.0).unwrap();
        let agg = aggregate(&VoteEstimate::zeros(3, 2, 4), &cfg, 7).unwrap();
        assert_eq!(agg.values, vec![0.0; 3]);
    }

    #[test]
    fn exact_votes_reproduce_quantized_average() {
        let cfg = BalancedConfig::new(7, 2, 0.3).unwrap();
        let grads = [0.1, -0.25, 0.07, 0.3, -0.01];
        let numerals: Vec<Vec<_>> = grads.iter().map(|&g| vec![encode(&cfg, g).unwrap()]).collect();
        let agg = aggregate(&true_votes(&cfg, &numerals).unwrap(), &cfg, grads.len()).unwrap();
        let qavg = grads.iter().map(|&g| quantize(&cfg, g).unwrap()).sum::<f64>() / grads.len() as f64;
        assert!((agg.values[0] - qavg).abs() < 1e-14);
        let flat: Vec<_> = numerals.into_iter().flatten().collect();
        assert_eq!(agg.numeral_means[0], average_numerals(&flat).unwrap());
    }

    #[test]
    fn aggregate_is_linear_in_votes() {
        let cfg = BalancedConfig::new(5, 2, 1.0).unwrap();
        let mut v1 = VoteEstimate::zeros(2, 2, 4);
        let mut v2 = VoteEstimate::zeros(2, 2, 4);
        for (j, x) in v1.values.iter_mut().enumerate() {
            *x = (j as f64 * 0.37).sin() * 3.0;
        }
        for (j, x) in v2.values.iter_mut().enumerate() {
            *x = (j as f64 * 1.3).cos() * 2.0 - 0.4;
        }
        let alpha = 0.3;
        let mixed = aggregate(&v1.combine(alpha, &v2, 1.0 - alpha).unwrap(), &cfg, 4).unwrap();
        let a1 = aggregate(&v1, &cfg, 4).unwrap();
        let a2 = aggregate(&v2, &cfg, 4).unwrap();
        for q in 0..2 {
            let lin = alpha * a1.values[q] + (1.0 - alpha) * a2.values[q];
            assert!((mixed.values[q] - lin).abs() < 1e-12);
        }
    }
}
