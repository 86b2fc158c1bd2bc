//! Balanced-base numeral encoder and decoder.
//!
//! A real value `v` in `[-v_max, v_max]` is rounded onto a grid of
//! `β^D` levels, written in base `β`, and every digit is shifted by
//! `-(β-1)/2` so the symbols are symmetric around zero. Decoding is the
//! linear map `v_max/ξ · Σ x_i β^i`, which makes the pair a mid-tread
//! uniform quantizer and lets averages of numerals decode to averages of
//! quantized values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported `β^D`. Keeps the rounding step exact in `f64`.
pub const MAX_LEVELS: u64 = 1 << 52;

/// Base, digit count and clip level of a balanced number system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBalancedConfig", into = "RawBalancedConfig")]
pub struct BalancedConfig {
    base: u32,
    digits: u32,
    v_max: f64,
    levels: u64,
}

#[derive(Serialize, Deserialize)]
struct RawBalancedConfig {
    base: u32,
    digits: u32,
    v_max: f64,
}

impl TryFrom<RawBalancedConfig> for BalancedConfig {
    type Error = Error;
    fn try_from(raw: RawBalancedConfig) -> Result<Self> {
        BalancedConfig::new(raw.base, raw.digits, raw.v_max)
    }
}

impl From<BalancedConfig> for RawBalancedConfig {
    fn from(c: BalancedConfig) -> Self {
        RawBalancedConfig {
            base: c.base,
            digits: c.digits,
            v_max: c.v_max,
        }
    }
}

impl BalancedConfig {
    pub fn new(base: u32, digits: u32, v_max: f64) -> Result<Self> {
        if base < 3 || base % 2 == 0 {
            return Err(Error::config(format!(
                "base must be odd and at least 3 (got {base})"
            )));
        }
        if digits < 1 {
            return Err(Error::config("digit count must be at least 1"));
        }
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::config(format!(
                "v_max must be a positive finite number (got {v_max})"
            )));
        }
        let levels = (base as u64)
            .checked_pow(digits)
            .filter(|&l| l <= MAX_LEVELS)
            .ok_or_else(|| {
                Error::config(format!(
                    "base^digits = {base}^{digits} exceeds the supported 2^52 levels"
                ))
            })?;
        Ok(Self {
            base,
            digits,
            v_max,
            levels,
        })
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn digits(&self) -> usize {
        self.digits as usize
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Same base and digit count, different clip level.
    pub fn with_v_max(&self, v_max: f64) -> Result<Self> {
        Self::new(self.base, self.digits, v_max)
    }

    /// Number of quantizer levels, `β^D`.
    pub fn levels(&self) -> u64 {
        self.levels
    }

    /// Bias `ξ = (β^D - 1) / 2`.
    pub fn bias(&self) -> u64 {
        (self.levels - 1) / 2
    }

    /// Quantizer step `Δ = 2 v_max / (β^D - 1)`.
    pub fn step_size(&self) -> f64 {
        2.0 * self.v_max / (self.levels - 1) as f64
    }

    /// Largest symbol magnitude, `(β-1)/2`.
    pub fn max_symbol(&self) -> i32 {
        ((self.base - 1) / 2) as i32
    }

    /// Non-zero symbols per digit, which is also the subcarriers reserved per digit.
    pub fn nonzero_symbols(&self) -> usize {
        (self.base - 1) as usize
    }

    /// Energy per activated subcarrier, `E_s = β - 1`.
    pub fn symbol_energy(&self) -> f64 {
        (self.base - 1) as f64
    }

    /// Subcarriers reserved for one scalar, `(β-1) D`.
    pub fn cells_per_value(&self) -> usize {
        self.nonzero_symbols() * self.digits()
    }

    pub fn symbol_set(&self) -> SymbolSet {
        SymbolSet::new(self.base)
    }

    /// `β^i` as a float.
    pub fn weight(&self, position: usize) -> f64 {
        (self.base as f64).powi(position as i32)
    }
}

/// Balanced numerals of one scalar, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NumeralSequence(Vec<i32>);

impl NumeralSequence {
    /// Wrap raw numerals, checking every element against the symbol range.
    pub fn new(cfg: &BalancedConfig, numerals: Vec<i32>) -> Result<Self> {
        crate::error::check_len("numeral sequence length", cfg.digits(), numerals.len())?;
        let m = cfg.max_symbol();
        if let Some(bad) = numerals.iter().find(|x| x.abs() > m) {
            return Err(Error::domain(format!(
                "numeral {bad} is outside the base-{} symbol set",
                cfg.base()
            )));
        }
        Ok(Self(numerals))
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Numeral at position `i`, where position 0 is the least significant.
    pub fn at_position(&self, i: usize) -> i32 {
        self.0[self.0.len() - 1 - i]
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }
}

/// Ordered symbol alphabet `a_0 … a_{β-1}` of a balanced base.
///
/// The order is `1, -1, 2, -2, …, 0`: even indices carry the positive
/// symbols, odd indices the negative ones, and the last index is zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSet {
    base: u32,
    symbols: Vec<i32>,
}

impl SymbolSet {
    pub fn new(base: u32) -> Self {
        let symbols = (0..base)
            .map(|j| symbol_value(base, j))
            .collect::<Vec<_>>();
        Self { base, symbols }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }

    /// Non-zero symbols in index order, `a_0 … a_{β-2}`.
    pub fn nonzero(&self) -> &[i32] {
        &self.symbols[..self.symbols.len() - 1]
    }

    pub fn get(&self, j: usize) -> Option<i32> {
        self.symbols.get(j).copied()
    }
}

fn symbol_value(base: u32, j: u32) -> i32 {
    if j == base - 1 {
        0
    } else if j % 2 == 1 {
        -((j as i32 + 1) / 2)
    } else {
        (j as i32 + 2) / 2
    }
}

/// Symbol `a_j` of base `β`.
pub fn symbol_of_index(base: u32, j: usize) -> Result<i32> {
    if base < 3 || base % 2 == 0 {
        return Err(Error::config(format!("base must be odd and at least 3 (got {base})")));
    }
    if j >= base as usize {
        return Err(Error::domain(format!(
            "symbol index {j} out of range for base {base}"
        )));
    }
    Ok(symbol_value(base, j as u32))
}

/// Index `j` with `a_j = x`; inverse of [`symbol_of_index`].
pub fn index_of_symbol(base: u32, x: i32) -> Result<usize> {
    if base < 3 || base % 2 == 0 {
        return Err(Error::config(format!("base must be odd and at least 3 (got {base})")));
    }
    let m = ((base - 1) / 2) as i32;
    if x.abs() > m {
        return Err(Error::domain(format!(
            "{x} is not a symbol of balanced base {base}"
        )));
    }
    Ok(match x.signum() {
        1 => (2 * x - 2) as usize,
        -1 => (-2 * x - 1) as usize,
        _ => (base - 1) as usize,
    })
}

/// Encode `v` into `D` balanced numerals. Values beyond `±v_max` are clipped.
pub fn encode(cfg: &BalancedConfig, v: f64) -> Result<NumeralSequence> {
    let (seq, _) = encode_clipped(cfg, v)?;
    Ok(seq)
}

/// Like [`encode`], also reporting whether `v` had to be clipped.
pub fn encode_clipped(cfg: &BalancedConfig, v: f64) -> Result<(NumeralSequence, bool)> {
    if v.is_nan() {
        return Err(Error::domain("cannot encode NaN"));
    }
    let clipped = v.abs() > cfg.v_max;
    let v = v.clamp(-cfg.v_max, cfg.v_max);
    let xi = cfg.bias() as f64;
    let top = cfg.levels - 1;
    let level = (xi * v / cfg.v_max + xi + 0.5).floor();
    let mut n = if level <= 0.0 {
        0
    } else {
        (level as u64).min(top)
    };
    let base = cfg.base as u64;
    let shift = cfg.max_symbol();
    let d = cfg.digits();
    let mut numerals = vec![0i32; d];
    for slot in numerals.iter_mut().rev() {
        *slot = (n % base) as i32 - shift;
        n /= base;
    }
    Ok((NumeralSequence(numerals), clipped))
}

/// Decode a (possibly averaged, non-integer) numeral sequence, most significant first.
pub fn decode(cfg: &BalancedConfig, seq: &[f64]) -> Result<f64> {
    crate::error::check_len("numeral sequence length", cfg.digits(), seq.len())?;
    let base = cfg.base as f64;
    // Horner over MSB-first digits gives Σ seq_i β^i.
    let s = seq.iter().fold(0.0, |acc, &x| acc * base + x);
    Ok(cfg.v_max * s / cfg.bias() as f64)
}

/// Decode integer numerals.
pub fn decode_numerals(cfg: &BalancedConfig, seq: &NumeralSequence) -> Result<f64> {
    decode(cfg, &seq.to_reals())
}

/// Quantize `v`: `decode(encode(v))`.
pub fn quantize(cfg: &BalancedConfig, v: f64) -> Result<f64> {
    decode_numerals(cfg, &encode(cfg, v)?)
}

/// Quantizer step of `cfg`.
pub fn step_size(cfg: &BalancedConfig) -> f64 {
    cfg.step_size()
}

/// Element-wise mean of numeral sequences.
pub fn average_numerals(sequences: &[NumeralSequence]) -> Result<Vec<f64>> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::domain("cannot average an empty set of numeral sequences"))?;
    let d = first.len();
    let mut sums = vec![0i64; d];
    for s in sequences {
        crate::error::check_len("numeral sequence length", d, s.len())?;
        for (acc, &x) in sums.iter_mut().zip(s.as_slice()) {
            *acc += x as i64;
        }
    }
    let k = sequences.len() as f64;
    Ok(sums.into_iter().map(|s| s as f64 / k).collect())
}
