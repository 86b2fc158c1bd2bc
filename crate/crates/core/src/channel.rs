//! Frequency-domain multiple-access channel.
//!
//! The received R-vector on cell `(l, m)` is `Σ_k h_{k,l,m} x_{k,l,m} + n_{l,m}`.
//! Channel coefficients stay constant over the OFDM symbols of one round and
//! carry the timing impairments as a subcarrier-dependent phase
//! `exp(-i 2π l (d_k + N_err) / N)`.
//!
//! A [`ChannelRealization`] is lazy: every coefficient is a pure function of
//! `(seed, device, subcarrier)`, so callers that only need a few cells (the
//! Monte Carlo harness) pay only for those, and still observe exactly the
//! values a fully materialized grid would hold.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource::{ActivationFrame, Cell};
use crate::rng::{self, Domain};

/// ITU Extended Pedestrian A tap delays in nanoseconds.
pub const EPA_DELAYS_NS: [f64; 7] = [0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0];
/// ITU Extended Pedestrian A relative tap powers in dB.
pub const EPA_POWERS_DB: [f64; 7] = [0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingModel {
    /// Independent CN(0, I_R) per device and subcarrier.
    #[default]
    IidFlat,
    /// Tapped delay line with the EPA power-delay profile.
    EpaTdl,
}

impl std::str::FromStr for FadingModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid_flat" | "iid" | "flat" => Ok(FadingModel::IidFlat),
            "epa_tdl" | "epa" => Ok(FadingModel::EpaTdl),
            other => Err(Error::config(format!("unknown fading model `{other}`"))),
        }
    }
}

/// Timing impairments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    /// Maximum spread of device arrival times, seconds.
    pub t_sync: f64,
    /// Receiver DFT window offset, samples.
    pub n_err: f64,
    pub fft_size: usize,
    /// Samples per second.
    pub sample_rate: f64,
}

impl SyncConfig {
    /// No timing error at all.
    pub fn ideal() -> Self {
        Self {
            t_sync: 0.0,
            n_err: 0.0,
            fft_size: 2048,
            sample_rate: 30.72e6,
        }
    }

    /// LTE numerology with `T_sync` equal to the inverse signal bandwidth.
    pub fn lte(subcarriers: usize, subcarrier_spacing: f64, n_err: f64) -> Self {
        Self {
            t_sync: 1.0 / (subcarriers as f64 * subcarrier_spacing),
            n_err,
            ..Self::ideal()
        }
    }

    /// Upper end of the per-device delay distribution, samples.
    pub fn max_delay_samples(&self) -> f64 {
        self.t_sync * self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub devices: usize,
    pub antennas: usize,
    /// σ_n², so SNR = 1/σ_n².
    pub noise_var: f64,
    pub fading: FadingModel,
    pub sync: SyncConfig,
    /// Hz, used by the tapped-delay-line model.
    pub subcarrier_spacing: f64,
}

impl ChannelConfig {
    pub fn new(devices: usize, antennas: usize, noise_var: f64) -> Result<Self> {
        let cfg = Self {
            devices,
            antennas,
            noise_var,
            fading: FadingModel::IidFlat,
            sync: SyncConfig::ideal(),
            subcarrier_spacing: 15e3,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_fading(mut self, fading: FadingModel) -> Self {
        self.fading = fading;
        self
    }

    pub fn with_sync(mut self, sync: SyncConfig) -> Self {
        self.sync = sync;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.antennas == 0 {
            return Err(Error::config("R must be at least 1"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::config(format!(
                "noise variance must be finite and non-negative (got {})",
                self.noise_var
            )));
        }
        let s = &self.sync;
        if !(s.t_sync >= 0.0 && s.t_sync.is_finite()) || !s.n_err.is_finite() {
            return Err(Error::config("timing parameters must be finite, T_sync >= 0"));
        }
        if s.fft_size == 0 || !(s.sample_rate > 0.0) || !(self.subcarrier_spacing > 0.0) {
            return Err(Error::config(
                "fft size, sample rate and subcarrier spacing must be positive",
            ));
        }
        Ok(())
    }
}

/// `σ_n² = 10^(-SNR/10)`.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One round's channel between every device and the R receive antennas.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    fading: FadingModel,
    devices: usize,
    antennas: usize,
    seed: u64,
    /// Per-device delay `d_k`, samples.
    delays: Vec<f64>,
    n_err: f64,
    fft_size: usize,
    subcarrier_spacing: f64,
    /// EPA taps, `[device][antenna][tap]`.
    taps: Vec<Complex64>,
}

/// Draw a channel realization.
pub fn draw_channel(cfg: &ChannelConfig, seed: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    let max_delay = cfg.sync.max_delay_samples();
    let delays = (0..cfg.devices)
        .map(|k| {
            if max_delay == 0.0 {
                0.0
            } else {
                rng::stream(seed, Domain::Delay, &[k as u64]).random::<f64>() * max_delay
            }
        })
        .collect();
    let taps = match cfg.fading {
        FadingModel::IidFlat => Vec::new(),
        FadingModel::EpaTdl => {
            let powers = epa_tap_powers();
            let mut taps = Vec::with_capacity(cfg.devices * cfg.antennas * powers.len());
            for k in 0..cfg.devices {
                let mut s = rng::stream(seed, Domain::Fading, &[k as u64, u64::MAX]);
                for _ in 0..cfg.antennas {
                    taps.extend(powers.iter().map(|&p| rng::complex_normal(&mut s, p)));
                }
            }
            taps
        }
    };
    Ok(ChannelRealization {
        fading: cfg.fading,
        devices: cfg.devices,
        antennas: cfg.antennas,
        seed,
        delays,
        n_err: cfg.sync.n_err,
        fft_size: cfg.sync.fft_size,
        subcarrier_spacing: cfg.subcarrier_spacing,
        taps,
    })
}

/// EPA tap powers in linear scale, normalized to unit sum.
pub fn epa_tap_powers() -> [f64; 7] {
    let mut p = EPA_POWERS_DB.map(|db| 10f64.powf(db / 10.0));
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

impl ChannelRealization {
    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    /// Timing phase rotation of device `k` on subcarrier `l`.
    pub fn timing_phase(&self, k: usize, subcarrier: usize) -> Complex64 {
        let shift = self.delays[k] + self.n_err;
        if shift == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let theta = -std::f64::consts::TAU * subcarrier as f64 * shift / self.fft_size as f64;
        Complex64::from_polar(1.0, theta)
    }

    /// Write `h_{k,l}` (all R antennas, timing phase included) into `out`.
    pub fn coefficients(&self, k: usize, subcarrier: usize, out: &mut [Complex64]) {
        debug_assert_eq!(out.len(), self.antennas);
        let phase = self.timing_phase(k, subcarrier);
        match self.fading {
            FadingModel::IidFlat => {
                let mut s = rng::stream(self.seed, Domain::Fading, &[k as u64, subcarrier as u64]);
                for h in out.iter_mut() {
                    *h = rng::complex_normal(&mut s, 1.0) * phase;
                }
            }
            FadingModel::EpaTdl => {
                let n_taps = EPA_DELAYS_NS.len();
                let f = subcarrier as f64 * self.subcarrier_spacing;
                let rot: [Complex64; 7] = EPA_DELAYS_NS
                    .map(|tau| Complex64::from_polar(1.0, -std::f64::consts::TAU * f * tau * 1e-9));
                for (r, h) in out.iter_mut().enumerate() {
                    let base = (k * self.antennas + r) * n_taps;
                    let g = &self.taps[base..base + n_taps];
                    *h = g.iter().zip(rot.iter()).map(|(a, b)| a * b).sum::<Complex64>() * phase;
                }
            }
        }
    }

    /// Full coefficient tensor, shape `(K, M, R)`, row-major.
    pub fn materialize(&self, subcarriers: usize) -> Vec<Complex64> {
        let r = self.antennas;
        let mut out = vec![Complex64::default(); self.devices * subcarriers * r];
        for k in 0..self.devices {
            for l in 0..subcarriers {
                let off = (k * subcarriers + l) * r;
                self.coefficients(k, l, &mut out[off..off + r]);
            }
        }
        out
    }
}

/// Received R-vectors on every cell, shape `(M, S, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedGrid {
    subcarriers: usize,
    symbols: usize,
    antennas: usize,
    data: Vec<Complex64>,
}

impl ReceivedGrid {
    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn at(&self, cell: Cell) -> &[Complex64] {
        let off = (cell.subcarrier * self.symbols + cell.symbol) * self.antennas;
        &self.data[off..off + self.antennas]
    }
}

/// Received R-vectors on an explicit list of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObservations {
    antennas: usize,
    data: Vec<Complex64>,
}

impl CellObservations {
    pub fn len(&self) -> usize {
        self.data.len() / self.antennas.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Observation of the `j`-th requested cell.
    pub fn get(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.antennas..(j + 1) * self.antennas]
    }
}

fn check_frames(frames: &[ActivationFrame], chan: &ChannelRealization) -> Result<()> {
    crate::error::check_len("activation frames vs channel devices", chan.devices, frames.len())?;
    for (k, f) in frames.iter().enumerate() {
        if f.device != k {
            return Err(Error::domain(format!(
                "frame at position {k} belongs to device {}",
                f.device
            )));
        }
    }
    Ok(())
}

fn add_signals(
    frames: &[ActivationFrame],
    chan: &ChannelRealization,
    mut slot: impl FnMut(Cell) -> Option<usize>,
    out: &mut [Complex64],
) {
    let r = chan.antennas;
    let mut h = vec![Complex64::default(); r];
    for (k, frame) in frames.iter().enumerate() {
        for &(cell, x) in &frame.entries {
            if let Some(j) = slot(cell) {
                chan.coefficients(k, cell.subcarrier, &mut h);
                for (y, hr) in out[j * r..(j + 1) * r].iter_mut().zip(&h) {
                    *y += hr * x;
                }
            }
        }
    }
}

fn add_noise(cell: Cell, noise_var: f64, seed: u64, y: &mut [Complex64]) {
    if noise_var == 0.0 {
        return;
    }
    let mut s = rng::stream(seed, Domain::Noise, &[cell.symbol as u64, cell.subcarrier as u64]);
    for v in y.iter_mut() {
        *v += rng::complex_normal(&mut s, noise_var);
    }
}

/// Superpose all devices' frames on a full `subcarriers × symbols` grid.
pub fn superpose(
    frames: &[ActivationFrame],
    chan: &ChannelRealization,
    cfg: &ChannelConfig,
    subcarriers: usize,
    symbols: usize,
    seed: u64,
) -> Result<ReceivedGrid> {
    check_frames(frames, chan)?;
    crate::error::check_len("receive antennas", cfg.antennas, chan.antennas)?;
    for f in frames {
        if let Some((c, _)) = f
            .entries
            .iter()
            .find(|(c, _)| c.subcarrier >= subcarriers || c.symbol >= symbols)
        {
            return Err(Error::domain(format!("cell {c:?} lies outside the grid")));
        }
    }
    let r = chan.antennas;
    let mut data = vec![Complex64::default(); subcarriers * symbols * r];
    add_signals(
        frames,
        chan,
        |c| Some(c.subcarrier * symbols + c.symbol),
        &mut data,
    );
    for l in 0..subcarriers {
        for m in 0..symbols {
            let off = (l * symbols + m) * r;
            add_noise(Cell::new(m, l), cfg.noise_var, seed, &mut data[off..off + r]);
        }
    }
    Ok(ReceivedGrid {
        subcarriers,
        symbols,
        antennas: r,
        data,
    })
}

/// Superpose only on `cells`. Values equal those of [`superpose`] on the same cells.
pub fn superpose_at(
    frames: &[ActivationFrame],
    chan: &ChannelRealization,
    cfg: &ChannelConfig,
    cells: &[Cell],
    seed: u64,
) -> Result<CellObservations> {
    check_frames(frames, chan)?;
    crate::error::check_len("receive antennas", cfg.antennas, chan.antennas)?;
    let r = chan.antennas;
    let index: HashMap<Cell, usize> = cells.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    if index.len() != cells.len() {
        return Err(Error::domain("requested cells must be distinct"));
    }
    let mut data = vec![Complex64::default(); cells.len() * r];
    add_signals(frames, chan, |c| index.get(&c).copied(), &mut data);
    for (j, &cell) in cells.iter().enumerate() {
        add_noise(cell, cfg.noise_var, seed, &mut data[j * r..(j + 1) * r]);
    }
    Ok(CellObservations { antennas: r, data })
}
