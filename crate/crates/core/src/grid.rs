//! Time-frequency resource grids and the pilot/data layout of a frame.

use num_complex::Complex64;

use crate::config::{SystemConfig, SLOT_SYMBOLS};
use crate::error::{Error, Result};

/// An M x N grid of complex values (symbol m, subcarrier n) for one antenna.
/// Storage is row-major: all subcarriers of symbol 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    symbols: usize,
    subcarriers: usize,
    values: Vec<Complex64>,
    pub antenna_index: usize,
}

impl ResourceGrid {
    pub fn zeros(symbols: usize, subcarriers: usize, antenna_index: usize) -> Self {
        Self {
            symbols,
            subcarriers,
            values: vec![Complex64::new(0.0, 0.0); symbols * subcarriers],
            antenna_index,
        }
    }

    pub fn from_fn(
        symbols: usize,
        subcarriers: usize,
        antenna_index: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut values = Vec::with_capacity(symbols * subcarriers);
        for m in 0..symbols {
            for n in 0..subcarriers {
                values.push(f(m, n));
            }
        }
        Self { symbols, subcarriers, values, antenna_index }
    }

    /// Builds a grid from row-major values.
    pub fn from_row_major(
        symbols: usize,
        subcarriers: usize,
        antenna_index: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len() != symbols * subcarriers {
            return Err(Error::Length { expected: symbols * subcarriers, actual: values.len() });
        }
        Ok(Self { symbols, subcarriers, values, antenna_index })
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.symbols, self.subcarriers)
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.values[m * self.subcarriers + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, v: Complex64) {
        self.values[m * self.subcarriers + n] = v;
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.values[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex64] {
        &mut self.values[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Column-major stacking: subcarrier column 0 top to bottom, then column 1, ...
    pub fn vectorize(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.values.len());
        for n in 0..self.subcarriers {
            for m in 0..self.symbols {
                out.push(self.get(m, n));
            }
        }
        out
    }

    pub fn devectorize(
        v: &[Complex64],
        symbols: usize,
        subcarriers: usize,
        antenna_index: usize,
    ) -> Result<Self> {
        if v.len() != symbols * subcarriers {
            return Err(Error::Length { expected: symbols * subcarriers, actual: v.len() });
        }
        Ok(Self::from_fn(symbols, subcarriers, antenna_index, |m, n| v[n * symbols + m]))
    }
}

/// Which symbol rows of a frame carry pilots and which carry data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub num_symbols: usize,
    pub num_subcarriers: usize,
    pub pilot_rows: Vec<usize>,
    pub data_rows: Vec<usize>,
}

impl FrameLayout {
    pub fn new(config: &SystemConfig) -> Self {
        Self::from_parts(config.num_symbols, config.num_subcarriers, config.pilots_per_slot())
    }

    /// The first `pilots_per_slot` symbols of every 14-symbol slot are pilots.
    pub fn from_parts(num_symbols: usize, num_subcarriers: usize, pilots_per_slot: usize) -> Self {
        let (pilot_rows, data_rows) =
            (0..num_symbols).partition(|m| m % SLOT_SYMBOLS < pilots_per_slot);
        Self { num_symbols, num_subcarriers, pilot_rows, data_rows }
    }

    pub fn is_pilot_row(&self, m: usize) -> bool {
        self.pilot_rows.binary_search(&m).is_ok()
    }

    pub fn data_len(&self) -> usize {
        self.data_rows.len() * self.num_subcarriers
    }

    pub fn pilot_len(&self) -> usize {
        self.pilot_rows.len() * self.num_subcarriers
    }
}
