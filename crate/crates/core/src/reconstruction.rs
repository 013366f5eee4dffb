//! Rebuilding path channels from estimated range, velocity and angles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{doppler_phase, range_phase, steering_vector_spaced, ChannelOperator, PathChannel};
use crate::config::SystemConfig;
use crate::error::{precondition, Error, Result};
use crate::grid::ResourceGrid;
use crate::sensing::{SensingEstimate, GUARD};

/// Angle grid size of the beam scan (1 degree steps over [-90, 90]).
pub const ANGLE_GRID_POINTS: usize = 181;
/// Peak-to-mean ratio of the beam scan below which an estimate is flagged.
pub const LOW_CONFIDENCE_RATIO: f64 = 3.0;

pub fn delay_doppler_from_rv(r_m: f64, v_m_s: f64, config: &SystemConfig) -> Result<(f64, f64)> {
    if !(r_m > 0.0) {
        return Err(precondition("delay_doppler_from_rv: range must be positive"));
    }
    Ok((r_m / config.speed_of_light_m_s, config.carrier_freq_hz * v_m_s / config.speed_of_light_m_s))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AngleEstimate {
    pub aod_rad: f64,
    pub aoa_rad: f64,
    /// Beam-scan peak over its mean.
    pub confidence: f64,
}

impl AngleEstimate {
    pub fn low_confidence(&self) -> bool {
        self.confidence < LOW_CONFIDENCE_RATIO
    }
}

pub fn angle_grid() -> Vec<f64> {
    (0..ANGLE_GRID_POINTS).map(|j| (j as f64 - 90.0) * PI / 180.0).collect()
}

/// Matched-beam scan of an N_r x N_t snapshot with half-wavelength arrays.
pub fn estimate_angles(snapshot: &DMatrix<Complex64>) -> Result<AngleEstimate> {
    estimate_angles_spaced(snapshot, 0.5)
}

/// Maximizes `|d_r(θr)^H S d_t(θt)|` over the angle grid; ties go to the
/// first grid point in (θr, θt) order.
pub fn estimate_angles_spaced(snapshot: &DMatrix<Complex64>, spacing_wavelengths: f64) -> Result<AngleEstimate> {
    if snapshot.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(precondition("estimate_angles: zero snapshot"));
    }
    let (n_rx, n_tx) = snapshot.shape();
    let grid = angle_grid();
    let dt: Vec<Vec<Complex64>> = grid.iter().map(|&a| steering_vector_spaced(a, n_tx, spacing_wavelengths)).collect();
    let dr: Vec<Vec<Complex64>> = grid.iter().map(|&a| steering_vector_spaced(a, n_rx, spacing_wavelengths)).collect();
    // w[jt][k] = (S d_t(θ_jt))_k
    let w: Vec<Vec<Complex64>> = dt
        .iter()
        .map(|d| (0..n_rx).map(|k| (0..n_tx).map(|i| snapshot[(k, i)] * d[i]).sum()).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut total = 0.0;
    for (jr, a) in dr.iter().enumerate() {
        for (jt, wt) in w.iter().enumerate() {
            let s: Complex64 = a.iter().zip(wt).map(|(x, y)| x.conj() * y).sum();
            let s = s.norm();
            total += s;
            if s > best.0 {
                best = (s, jr, jt);
            }
        }
    }
    let mean = total / (ANGLE_GRID_POINTS * ANGLE_GRID_POINTS) as f64;
    Ok(AngleEstimate {
        aod_rad: grid[best.2],
        aoa_rad: grid[best.1],
        confidence: if mean > 0.0 { best.0 / mean } else { 0.0 },
    })
}

fn active(x_ref: &[ResourceGrid], m: usize, n: usize) -> bool {
    x_ref.iter().any(|g| g.get(m, n).norm() >= GUARD)
}

/// Mean of `y x^H conj(h_φ)` over the elements where `x_ref` is known,
/// with the phase law of the given delay and Doppler removed.
pub fn spatial_snapshot(
    rx: &[ResourceGrid],
    x_ref: &[ResourceGrid],
    delay_s: f64,
    doppler_hz: f64,
    config: &SystemConfig,
) -> DMatrix<Complex64> {
    let (n_rx, n_tx) = (rx.len(), x_ref.len());
    let (m_len, n_len) = rx[0].dims();
    let range: Vec<Complex64> =
        (0..n_len).map(|n| range_phase(n, config.subcarrier_spacing_hz, delay_s).conj()).collect();
    let mut s = DMatrix::<Complex64>::zeros(n_rx, n_tx);
    let mut count = 0usize;
    for m in 0..m_len {
        let dop = doppler_phase(m, config.symbol_period_s, doppler_hz).conj();
        for n in 0..n_len {
            if !active(x_ref, m, n) {
                continue;
            }
            count += 1;
            let ph = dop * range[n];
            for k in 0..n_rx {
                let y = rx[k].get(m, n) * ph;
                for i in 0..n_tx {
                    s[(k, i)] += y * x_ref[i].get(m, n).conj();
                }
            }
        }
    }
    if count > 0 {
        s /= Complex64::new(count as f64, 0.0);
    }
    s
}

/// Joint least-squares complex gains of the given path shapes (their own
/// gains are ignored) against `rx`, over the elements where `x_ref` is known.
pub fn fit_gains(
    paths: &[PathChannel],
    rx: &[ResourceGrid],
    x_ref: &[ResourceGrid],
    config: &SystemConfig,
) -> Vec<Complex64> {
    let l = paths.len();
    if l == 0 {
        return Vec::new();
    }
    let unit: Vec<PathChannel> = paths.iter().map(|p| p.with_gain(Complex64::new(1.0, 0.0))).collect();
    let op = ChannelOperator::new(&unit, config);
    let (m_len, n_len) = rx[0].dims();
    // Cross-correlation of receive steering vectors.
    let c = DMatrix::from_fn(l, l, |a, b| {
        unit[a].rx_steering.iter().zip(&unit[b].rx_steering).map(|(x, y)| x.conj() * y).sum::<Complex64>()
    });
    let mut gram = DMatrix::<Complex64>::zeros(l, l);
    let mut rhs = DVector::<Complex64>::zeros(l);
    let mut w = vec![Complex64::new(0.0, 0.0); l];
    let mut proj = vec![Complex64::new(0.0, 0.0); l];
    for m in 0..m_len {
        for n in 0..n_len {
            if !active(x_ref, m, n) {
                continue;
            }
            for (a, p) in unit.iter().enumerate() {
                let u: Complex64 =
                    p.tx_steering.iter().zip(x_ref).map(|(d, g)| d.conj() * g.get(m, n)).sum();
                w[a] = u * op.path_coefficient(a, m, n);
                proj[a] = p.rx_steering.iter().zip(rx).map(|(d, g)| d.conj() * g.get(m, n)).sum();
            }
            for a in 0..l {
                let wa = w[a].conj();
                rhs[a] += wa * proj[a];
                for b in 0..l {
                    gram[(a, b)] += wa * w[b];
                }
            }
        }
    }
    for a in 0..l {
        for b in 0..l {
            gram[(a, b)] *= c[(a, b)];
        }
    }
    let trace: f64 = (0..l).map(|a| gram[(a, a)].re).sum();
    if !(trace > 0.0) {
        return vec![Complex64::new(0.0, 0.0); l];
    }
    let ridge = 1e-12 * trace / l as f64;
    for a in 0..l {
        gram[(a, a)] += Complex64::new(ridge, 0.0);
    }
    match gram.lu().solve(&rhs) {
        Some(g) => g.iter().copied().collect(),
        None => vec![Complex64::new(0.0, 0.0); l],
    }
}

/// `rx -= Σ_l H_l x_ref` element-wise.
pub fn subtract_paths(
    rx: &mut [ResourceGrid],
    paths: &[PathChannel],
    x_ref: &[ResourceGrid],
    config: &SystemConfig,
) {
    if paths.is_empty() {
        return;
    }
    let op = ChannelOperator::new(paths, config);
    let (m_len, n_len) = rx[0].dims();
    let mut x = vec![Complex64::new(0.0, 0.0); x_ref.len()];
    let mut y = vec![Complex64::new(0.0, 0.0); rx.len()];
    for m in 0..m_len {
        for n in 0..n_len {
            for (i, g) in x_ref.iter().enumerate() {
                x[i] = g.get(m, n);
            }
            y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            op.apply_add(m, n, &x, &mut y);
            for (k, g) in rx.iter_mut().enumerate() {
                g.set(m, n, g.get(m, n) - y[k]);
            }
        }
    }
}

/// Path channels from an estimate (range, velocity and angles per entry)
/// and one complex gain per entry.
pub fn reconstruct_channel(
    estimate: &SensingEstimate,
    gains: &[Complex64],
    config: &SystemConfig,
) -> Result<Vec<PathChannel>> {
    if gains.len() != estimate.len() {
        return Err(Error::Length { expected: estimate.len(), actual: gains.len() });
    }
    estimate
        .iter()
        .zip(gains)
        .map(|(d, &g)| {
            let (delay, doppler) = delay_doppler_from_rv(d.range_m, d.velocity_m_s, config)?;
            Ok(PathChannel::new(g, delay, doppler, d.aod_rad, d.aoa_rad, config))
        })
        .collect()
}

/// Reconstructs the estimate's paths with gains fitted jointly on `rx`.
pub fn reconstruct_fitted(
    estimate: &SensingEstimate,
    rx: &[ResourceGrid],
    x_ref: &[ResourceGrid],
    config: &SystemConfig,
) -> Result<Vec<PathChannel>> {
    let unit = vec![Complex64::new(1.0, 0.0); estimate.len()];
    let shapes = reconstruct_channel(estimate, &unit, config)?;
    let gains = fit_gains(&shapes, rx, x_ref, config);
    Ok(shapes.into_iter().zip(gains).map(|(p, g)| p.with_gain(g)).collect())
}
