//! Bits, Gray-mapped square QAM, and pilot/data framing.
//!
//! Gray map: the first half of each symbol's bits select the in-phase level,
//! the second half the quadrature level, each MSB first. A per-axis Gray code
//! g maps to level index `b` with `g = b ^ (b >> 1)`, and level index b maps to
//! amplitude `2b - (L - 1)` before normalization to unit mean energy.
//! For 16-QAM the bits `0000` give `(-3 - 3j)/sqrt(10)`.

use num_complex::Complex64;
use rand::Rng;

use crate::config::SystemConfig;
use crate::error::{precondition, Error, Result};
use crate::grid::{FrameLayout, ResourceGrid};
use crate::rng;

/// A block of bits, one per byte (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBlock {
    pub bits: Vec<u8>,
}

impl BitBlock {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hamming_distance(&self, other: &BitBlock) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

/// Uniform random bits, deterministic in `seed`.
pub fn random_bits(seed: u64, count: usize) -> Result<BitBlock> {
    if count == 0 {
        return Err(precondition("random_bits: count must be positive"));
    }
    let mut r = rng::rng_for(seed, rng::BITS);
    let mut bits = Vec::with_capacity(count);
    while bits.len() < count {
        let word: u64 = r.random();
        let take = (count - bits.len()).min(64);
        bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
    }
    Ok(BitBlock { bits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: u32,
    bits_per_symbol: usize,
    side: usize,
    norm: f64,
    points: Vec<Complex64>,
}

fn gray(b: usize) -> usize {
    b ^ (b >> 1)
}

impl Constellation {
    pub fn new(order: u32) -> Result<Self> {
        if !matches!(order, 4 | 16 | 64) {
            return Err(Error::UnsupportedOrder(order));
        }
        let bits_per_symbol = order.trailing_zeros() as usize;
        let side = 1usize << (bits_per_symbol / 2);
        let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let half = bits_per_symbol / 2;
        let mut points = vec![Complex64::new(0.0, 0.0); order as usize];
        for bi in 0..side {
            for bq in 0..side {
                let index = (gray(bi) << half) | gray(bq);
                points[index] = Complex64::new(
                    (2.0 * bi as f64 - (side as f64 - 1.0)) / norm,
                    (2.0 * bq as f64 - (side as f64 - 1.0)) / norm,
                );
            }
        }
        Ok(Self { order, bits_per_symbol, side, norm, points })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Points indexed by their bit label read as an integer (MSB first).
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn min_distance(&self) -> f64 {
        2.0 / self.norm
    }

    /// Nearest point index. On an exact tie the smaller Gray code wins on
    /// each axis, which is also the smallest label among the tied points.
    pub fn nearest(&self, z: Complex64) -> usize {
        let half = self.bits_per_symbol / 2;
        (self.nearest_axis(z.re) << half) | self.nearest_axis(z.im)
    }

    fn nearest_axis(&self, x: f64) -> usize {
        let u = x * self.norm;
        let mut best = (f64::INFINITY, usize::MAX);
        for b in 0..self.side {
            let d = (u - (2.0 * b as f64 - (self.side as f64 - 1.0))).abs();
            let g = gray(b);
            if d < best.0 || (d == best.0 && g < best.1) {
                best = (d, g);
            }
        }
        best.1
    }

    pub fn project(&self, z: Complex64) -> Complex64 {
        self.points[self.nearest(z)]
    }

    pub fn index_to_bits(&self, index: usize, out: &mut Vec<u8>) {
        for k in (0..self.bits_per_symbol).rev() {
            out.push(((index >> k) & 1) as u8);
        }
    }

    pub fn bits_to_index(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | (b as usize & 1))
    }

    pub fn modulate(&self, bits: &BitBlock) -> Result<Vec<Complex64>> {
        if bits.len() % self.bits_per_symbol != 0 {
            return Err(precondition(format!(
                "bit count {} not divisible by {}",
                bits.len(),
                self.bits_per_symbol
            )));
        }
        Ok(bits
            .bits
            .chunks(self.bits_per_symbol)
            .map(|c| self.points[self.bits_to_index(c)])
            .collect())
    }

    pub fn demodulate(&self, symbols: &[Complex64]) -> BitBlock {
        let mut bits = Vec::with_capacity(symbols.len() * self.bits_per_symbol);
        for &s in symbols {
            self.index_to_bits(self.nearest(s), &mut bits);
        }
        BitBlock { bits }
    }

    pub fn indices_to_bits(&self, indices: &[usize]) -> BitBlock {
        let mut bits = Vec::with_capacity(indices.len() * self.bits_per_symbol);
        for &i in indices {
            self.index_to_bits(i, &mut bits);
        }
        BitBlock { bits }
    }
}

pub fn qam_modulate(bits: &BitBlock, order: u32) -> Result<Vec<Complex64>> {
    Constellation::new(order)?.modulate(bits)
}

pub fn qam_demodulate(symbols: &[Complex64], order: u32) -> Result<BitBlock> {
    Ok(Constellation::new(order)?.demodulate(symbols))
}

/// Unit-magnitude pseudo-random QPSK pilots for one transmit antenna, in
/// row-major order over the pilot rows.
pub fn pilot_symbols(config: &SystemConfig, layout: &FrameLayout, antenna: usize) -> Vec<Complex64> {
    let mut r = rng::rng_for(config.pilot_seed, rng::PILOTS.wrapping_add(antenna as u64 * 0x100));
    let a = std::f64::consts::FRAC_1_SQRT_2;
    (0..layout.pilot_len())
        .map(|_| {
            let q: u8 = r.random_range(0..4);
            Complex64::new(if q & 1 == 0 { a } else { -a }, if q & 2 == 0 { a } else { -a })
        })
        .collect()
}

/// Places row-major data and pilot symbols into one antenna's grid.
pub fn assemble_frame(
    data_symbols: &[Complex64],
    pilot_symbols: &[Complex64],
    layout: &FrameLayout,
    antenna: usize,
) -> Result<ResourceGrid> {
    if data_symbols.len() != layout.data_len() {
        return Err(Error::Length { expected: layout.data_len(), actual: data_symbols.len() });
    }
    if pilot_symbols.len() != layout.pilot_len() {
        return Err(Error::Length { expected: layout.pilot_len(), actual: pilot_symbols.len() });
    }
    let n = layout.num_subcarriers;
    let mut grid = ResourceGrid::zeros(layout.num_symbols, n, antenna);
    for (k, &m) in layout.data_rows.iter().enumerate() {
        grid.row_mut(m).copy_from_slice(&data_symbols[k * n..(k + 1) * n]);
    }
    for (k, &m) in layout.pilot_rows.iter().enumerate() {
        grid.row_mut(m).copy_from_slice(&pilot_symbols[k * n..(k + 1) * n]);
    }
    Ok(grid)
}

fn extract_rows(grid: &ResourceGrid, rows: &[usize]) -> Vec<Complex64> {
    rows.iter().flat_map(|&m| grid.row(m).iter().copied()).collect()
}

pub fn extract_data(grid: &ResourceGrid, layout: &FrameLayout) -> Vec<Complex64> {
    extract_rows(grid, &layout.data_rows)
}

pub fn extract_pilot(grid: &ResourceGrid, layout: &FrameLayout) -> Vec<Complex64> {
    extract_rows(grid, &layout.pilot_rows)
}

/// Copy of `grid` with every row outside `rows` zeroed.
pub fn keep_rows(grid: &ResourceGrid, rows: &[usize]) -> ResourceGrid {
    let mut out = ResourceGrid::zeros(grid.symbols(), grid.subcarriers(), grid.antenna_index);
    for &m in rows {
        out.row_mut(m).copy_from_slice(grid.row(m));
    }
    out
}
