//! Time-frequency resource allocation and per-device activation.
//!
//! Every gradient owns `(β-1)·D` cells: one cell per (digit position,
//! non-zero symbol). A device signals numeral `x` at position `i` by
//! putting energy on the cell of symbol `x` and leaving the other `β-2`
//! cells of that digit empty. The zero symbol has no cell.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codec::{index_of_symbol, BalancedConfig, NumeralSequence};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, Domain};

/// One resource element: OFDM symbol index and subcarrier index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub symbol: usize,
    pub subcarrier: usize,
}

impl Cell {
    pub fn new(symbol: usize, subcarrier: usize) -> Self {
        Self { symbol, subcarrier }
    }
}

/// Grid geometry for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    subcarriers: usize,
    symbols: usize,
    codec: BalancedConfig,
}

impl GridConfig {
    pub fn new(subcarriers: usize, symbols: usize, codec: BalancedConfig) -> Result<Self> {
        let need = codec.cells_per_value();
        if subcarriers < need {
            return Err(Error::config(format!(
                "M = {subcarriers} subcarriers cannot hold one gradient; need (β-1)·D = {need}"
            )));
        }
        if symbols == 0 {
            return Err(Error::config("at least one OFDM symbol is required"));
        }
        Ok(Self {
            subcarriers,
            symbols,
            codec,
        })
    }

    /// Smallest grid of `subcarriers` that carries `gradients` values.
    pub fn for_gradients(subcarriers: usize, gradients: usize, codec: BalancedConfig) -> Result<Self> {
        let probe = Self::new(subcarriers, 1, codec)?;
        Self::new(subcarriers, probe.symbols_needed(gradients).max(1), codec)
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn codec(&self) -> &BalancedConfig {
        &self.codec
    }

    /// `M_par = floor(M / ((β-1) D))`.
    pub fn gradients_per_symbol(&self) -> usize {
        self.subcarriers / self.codec.cells_per_value()
    }

    pub fn capacity(&self) -> usize {
        self.gradients_per_symbol() * self.symbols
    }

    pub fn symbols_needed(&self, gradients: usize) -> usize {
        gradients.div_ceil(self.gradients_per_symbol())
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.symbol < self.symbols && cell.subcarrier < self.subcarriers
    }
}

/// Cells owned by one gradient, indexed by (digit position `i`, symbol index `ℓ`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceSet {
    gradient: usize,
    nonzero_symbols: usize,
    cells: Vec<Cell>,
}

impl ResourceSet {
    pub fn gradient(&self) -> usize {
        self.gradient
    }

    /// All cells, ordered by digit position then symbol index.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Cell for position `i` (0 = least significant) and symbol index `ℓ`.
    pub fn cell(&self, position: usize, symbol_index: usize) -> Cell {
        self.cells[position * self.nonzero_symbols + symbol_index]
    }

    /// The `β-1` cells of one digit position.
    pub fn digit_cells(&self, position: usize) -> &[Cell] {
        let n = self.nonzero_symbols;
        &self.cells[position * n..(position + 1) * n]
    }
}

/// Allocate `gradients` disjoint resource sets, frequency first.
///
/// Gradient `q` sits in OFDM symbol `q / M_par`, slot `q % M_par`, and uses
/// the contiguous subcarriers of that slot. The `M mod (β-1)D` subcarriers
/// at the top of every symbol stay unused.
pub fn map_gradients(grid: &GridConfig, gradients: usize) -> Result<Vec<ResourceSet>> {
    if gradients > grid.capacity() {
        return Err(Error::Capacity {
            gradients,
            required_symbols: grid.symbols_needed(gradients),
            available_symbols: grid.symbols,
        });
    }
    let per_grad = grid.codec.cells_per_value();
    let m_par = grid.gradients_per_symbol();
    let nonzero_symbols = grid.codec.nonzero_symbols();
    Ok((0..gradients)
        .map(|q| {
            let symbol = q / m_par;
            let first = (q % m_par) * per_grad;
            ResourceSet {
                gradient: q,
                nonzero_symbols,
                cells: (first..first + per_grad)
                    .map(|f| Cell::new(symbol, f))
                    .collect(),
            }
        })
        .collect())
}

/// Sparse transmit grid of one edge device.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFrame {
    pub device: usize,
    /// Non-zero modulation symbols. Each cell appears at most once.
    pub entries: Vec<(Cell, Complex64)>,
}

impl ActivationFrame {
    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x.norm_sqr()).sum()
    }
}

/// Build the transmit grids of all devices.
///
/// `numerals[k][q]` is the numeral sequence of gradient `q` at device `k`.
/// The randomization phase of (device, gradient, digit) comes from its own
/// keyed stream, so it does not depend on any other value.
pub fn activate(
    grid: &GridConfig,
    sets: &[ResourceSet],
    numerals: &[Vec<NumeralSequence>],
    seed: u64,
) -> Result<Vec<ActivationFrame>> {
    let cfg = grid.codec;
    let amp = cfg.symbol_energy().sqrt();
    let d = cfg.digits();
    numerals
        .iter()
        .enumerate()
        .map(|(k, per_grad)| {
            check_len("gradients per device", sets.len(), per_grad.len())?;
            let mut entries = Vec::with_capacity(sets.len() * d);
            for (set, seq) in sets.iter().zip(per_grad) {
                check_len("numeral sequence length", d, seq.len())?;
                for i in 0..d {
                    let x = seq.at_position(i);
                    if x == 0 {
                        continue;
                    }
                    let key = [k as u64, set.gradient as u64, i as u64];
                    let r = rng::unit_phase(&mut rng::stream(seed, Domain::Phase, &key));
                    let l = index_of_symbol(cfg.base(), x)?;
                    let cell = set.cell(i, l);
                    if !grid.contains(cell) {
                        return Err(Error::domain(format!("cell {cell:?} lies outside the grid")));
                    }
                    entries.push((cell, r * amp));
                }
            }
            Ok(ActivationFrame { device: k, entries })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;
    use std::collections::HashSet;

    fn codec(b: u32, d: u32) -> BalancedConfig {
        BalancedConfig::new(b, d, 1.0).unwrap()
    }

    #[test]
    fn lte_sized_grid_has_150_slots() {
        let g = GridConfig::new(1200, 1, codec(5, 2)).unwrap();
        assert_eq!(g.gradients_per_symbol(), 150);
        let sets = map_gradients(&g, 1).unwrap();
        assert_eq!(
            sets[0].cells(),
            (0..8).map(|f| Cell::new(0, f)).collect::<Vec<_>>().as_slice()
        );
    }

    #[test]
    fn one_gradient_per_symbol_when_grid_is_tight() {
        let g = GridConfig::new(8, 2, codec(5, 2)).unwrap();
        let sets = map_gradients(&g, 2).unwrap();
        assert_eq!(
            sets[1].cells(),
            (0..8).map(|f| Cell::new(1, f)).collect::<Vec<_>>().as_slice()
        );
    }

    #[test]
    fn capacity_error_reports_required_symbols() {
        let g = GridConfig::new(1200, 2, codec(5, 2)).unwrap();
        match map_gradients(&g, 301) {
            Err(Error::Capacity {
                required_symbols,
                available_symbols,
                ..
            }) => {
                assert_eq!(required_symbols, 3);
                assert_eq!(available_symbols, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(GridConfig::new(7, 1, codec(5, 2)).is_err());
        assert_eq!(GridConfig::for_gradients(1200, 1002, codec(5, 2)).unwrap().symbols(), 7);
    }

    #[test]
    fn sets_are_disjoint_and_cover_expected_cells() {
        for (m, b, d) in [(13usize, 3u32, 2u32), (20, 5, 1), (30, 7, 2), (9, 3, 1)] {
            let c = codec(b, d);
            let g = GridConfig::new(m, 4, c).unwrap();
            let sets = map_gradients(&g, g.capacity()).unwrap();
            let mut seen = HashSet::new();
            for s in &sets {
                assert_eq!(s.cells().len(), c.cells_per_value());
                for &cell in s.cells() {
                    assert!(g.contains(cell));
                    assert!(cell.subcarrier < g.gradients_per_symbol() * c.cells_per_value());
                    assert!(seen.insert(cell), "cell {cell:?} reused");
                }
            }
        }
    }

    #[test]
    fn activation_rules() {
        let c = codec(5, 3);
        let g = GridConfig::new(12, 1, c).unwrap();
        let sets = map_gradients(&g, 1).unwrap();
        let seq = NumeralSequence::new(&c, vec![0, -2, 1]).unwrap();
        let frames = activate(&g, &sets, &[vec![seq]], 9).unwrap();
        let e = &frames[0].entries;
        assert_eq!(e.len(), 2);
        // position 0 carries symbol 1 -> ℓ = 0; position 1 carries -2 -> ℓ = 3
        assert_eq!(e[0].0, sets[0].cell(0, 0));
        assert_eq!(e[1].0, sets[0].cell(1, 3));
        for (_, x) in e {
            assert!((x.norm() - 2.0).abs() < 1e-12);
        }
        // zero digit at position 2 leaves its cells silent
        for cell in sets[0].digit_cells(2) {
            assert!(e.iter().all(|(c2, _)| c2 != cell));
        }
    }

    #[test]
    fn activation_is_deterministic_and_energy_bounded() {
        let c = codec(5, 2);
        let g = GridConfig::new(1200, 1, c).unwrap();
        let sets = map_gradients(&g, 150).unwrap();
        let numerals = (0..3)
            .map(|k| {
                (0..150)
                    .map(|q| encode(&c, ((q * 7 + k * 13) % 41) as f64 / 20.0 - 1.0).unwrap())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        let a = activate(&g, &sets, &numerals, 5).unwrap();
        let b = activate(&g, &sets, &numerals, 5).unwrap();
        assert_eq!(a, b);
        let other = activate(&g, &sets, &numerals, 6).unwrap();
        assert_ne!(a, other);
        for f in &a {
            assert!(f.energy() <= (150 * 2 * 4) as f64 + 1e-9);
            assert!(f.energy() <= 1200.0 + 1e-9);
        }
    }
}
