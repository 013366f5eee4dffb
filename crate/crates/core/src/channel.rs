//! Bistatic multipath channel: targets, per-path delay/Doppler/angle
//! parameters, application to transmit grids, and AWGN.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};

use crate::config::{SystemConfig, SPEED_OF_LIGHT};
use crate::error::{precondition, Error, Result};
use crate::grid::ResourceGrid;

/// A point scatterer seen by a separated transmitter and receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub range_tx_leg_m: f64,
    pub range_rx_leg_m: f64,
    pub bistatic_range_m: f64,
    pub absolute_speed_m_s: f64,
    pub heading_rad: f64,
    pub aod_rad: f64,
    pub aoa_rad: f64,
    pub rcs_m2: f64,
    /// Bistatic range-rate seen by the receiver; positive when the phase
    /// advances with symbol index.
    pub radial_speed_m_s: f64,
}

/// Radial speed produced by motion `v_abs` along `heading`:
/// `-2 v' cos((θr-θt)/2) cos(α - (θr+θt)/2)`.
pub fn bistatic_radial_speed(v_abs: f64, heading: f64, aod: f64, aoa: f64) -> f64 {
    -v_abs * 2.0 * ((aoa - aod) / 2.0).cos() * (heading - (aoa + aod) / 2.0).cos()
}

impl Target {
    pub fn new(
        range_tx_leg_m: f64,
        range_rx_leg_m: f64,
        absolute_speed_m_s: f64,
        heading_rad: f64,
        aod_rad: f64,
        aoa_rad: f64,
        rcs_m2: f64,
    ) -> Result<Self> {
        let finite = [range_tx_leg_m, range_rx_leg_m, absolute_speed_m_s, heading_rad, aod_rad, aoa_rad, rcs_m2];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(precondition("target fields must be finite"));
        }
        if range_tx_leg_m <= 0.0 || range_rx_leg_m <= 0.0 {
            return Err(precondition("target legs must be positive"));
        }
        if aod_rad.abs() >= PI / 2.0 || aoa_rad.abs() >= PI / 2.0 {
            return Err(precondition("target angles must lie in (-pi/2, pi/2)"));
        }
        if rcs_m2 <= 0.0 {
            return Err(precondition("rcs must be positive"));
        }
        if absolute_speed_m_s < 0.0 || absolute_speed_m_s >= SPEED_OF_LIGHT {
            return Err(precondition("speed must be in [0, c)"));
        }
        Ok(Self {
            range_tx_leg_m,
            range_rx_leg_m,
            bistatic_range_m: range_tx_leg_m + range_rx_leg_m,
            absolute_speed_m_s,
            heading_rad,
            aod_rad,
            aoa_rad,
            rcs_m2,
            radial_speed_m_s: bistatic_radial_speed(absolute_speed_m_s, heading_rad, aod_rad, aoa_rad),
        })
    }

    /// Solves for the absolute speed that yields `radial_speed` at `heading`.
    pub fn from_radial_speed(
        range_tx_leg_m: f64,
        range_rx_leg_m: f64,
        radial_speed: f64,
        heading_rad: f64,
        aod_rad: f64,
        aoa_rad: f64,
        rcs_m2: f64,
    ) -> Result<Self> {
        let per_unit = bistatic_radial_speed(1.0, heading_rad, aod_rad, aoa_rad);
        let v_abs = if radial_speed == 0.0 {
            0.0
        } else if per_unit.abs() < 1e-9 {
            return Err(precondition("heading is perpendicular to the bistatic bisector"));
        } else {
            radial_speed / per_unit
        };
        if v_abs < 0.0 {
            return Err(precondition("heading gives a radial speed of the wrong sign"));
        }
        let mut t = Self::new(range_tx_leg_m, range_rx_leg_m, v_abs, heading_rad, aod_rad, aoa_rad, rcs_m2)?;
        t.radial_speed_m_s = radial_speed;
        Ok(t)
    }

    /// Target moving against the bistatic bisector so that its full speed
    /// shows up as positive radial speed (scaled by the bistatic factor).
    pub fn with_radial_speed(
        range_tx_leg_m: f64,
        range_rx_leg_m: f64,
        radial_speed: f64,
        aod_rad: f64,
        aoa_rad: f64,
        rcs_m2: f64,
    ) -> Result<Self> {
        let heading = (aoa_rad + aod_rad) / 2.0 + PI;
        Self::from_radial_speed(range_tx_leg_m, range_rx_leg_m, radial_speed, heading, aod_rad, aoa_rad, rcs_m2)
    }
}

/// Uniform linear array response `(1/sqrt n) exp(j 2π s k sin θ)` with element
/// spacing `s` in wavelengths.
pub fn steering_vector_spaced(angle_rad: f64, n_elements: usize, spacing_wavelengths: f64) -> Vec<Complex64> {
    let a = 1.0 / (n_elements as f64).sqrt();
    let step = 2.0 * PI * spacing_wavelengths * angle_rad.sin();
    (0..n_elements).map(|k| Complex64::from_polar(a, step * k as f64)).collect()
}

/// Half-wavelength ULA steering vector.
pub fn steering_vector(angle_rad: f64, n_elements: usize) -> Vec<Complex64> {
    steering_vector_spaced(angle_rad, n_elements, 0.5)
}

/// Radar-equation amplitude factor `σ λ² / ((4π)³ (r1 r2)²)`.
pub fn large_scale_gain(r1_m: f64, r2_m: f64, rcs_m2: f64, lambda_m: f64) -> Result<f64> {
    if !(r1_m > 0.0 && r2_m > 0.0) {
        return Err(precondition("large_scale_gain: ranges must be positive"));
    }
    let four_pi = 4.0 * PI;
    Ok(rcs_m2 * lambda_m * lambda_m / (four_pi.powi(3) * (r1_m * r2_m).powi(2)))
}

/// Weibull draw, shape 2 and unit scale, so E[x²] = 1.
pub fn small_scale_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let w = Weibull::new(1.0, 2.0).expect("valid Weibull parameters");
    loop {
        let x: f64 = w.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

/// Bistatic Doppler shift without the small-speed approximation.
pub fn doppler_exact(v_prime_m_s: f64, alpha_rad: f64, aod_rad: f64, aoa_rad: f64, fc_hz: f64) -> f64 {
    let beta = v_prime_m_s / SPEED_OF_LIGHT;
    -beta * fc_hz * ((alpha_rad - aod_rad).cos() + (alpha_rad - aoa_rad).cos())
        / (1.0 + beta * (alpha_rad - aoa_rad).cos())
}

/// First-order bistatic Doppler shift.
pub fn doppler_approx(v_prime_m_s: f64, alpha_rad: f64, aod_rad: f64, aoa_rad: f64, fc_hz: f64) -> f64 {
    -(v_prime_m_s / SPEED_OF_LIGHT)
        * fc_hz
        * 2.0
        * ((aoa_rad - aod_rad) / 2.0).cos()
        * (alpha_rad - (aoa_rad + aod_rad) / 2.0).cos()
}

/// `exp(-j 2π n Δf τ)`
#[inline]
pub fn range_phase(n: usize, subcarrier_spacing_hz: f64, delay_s: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * n as f64 * subcarrier_spacing_hz * delay_s)
}

/// `exp(+j 2π f_d m T)`
#[inline]
pub fn doppler_phase(m: usize, symbol_period_s: f64, doppler_hz: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * doppler_hz * m as f64 * symbol_period_s)
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChannel {
    /// Amplitude including the constant carrier phase `exp(-j2π f_c τ)`.
    pub complex_gain: Complex64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub aod_rad: f64,
    pub aoa_rad: f64,
    pub tx_steering: Vec<Complex64>,
    pub rx_steering: Vec<Complex64>,
}

impl PathChannel {
    pub fn new(
        complex_gain: Complex64,
        delay_s: f64,
        doppler_hz: f64,
        aod_rad: f64,
        aoa_rad: f64,
        config: &SystemConfig,
    ) -> Self {
        let s = config.spacing_wavelengths();
        Self {
            complex_gain,
            delay_s,
            doppler_hz,
            aod_rad,
            aoa_rad,
            tx_steering: steering_vector_spaced(aod_rad, config.num_tx_antennas, s),
            rx_steering: steering_vector_spaced(aoa_rad, config.num_rx_antennas, s),
        }
    }

    /// Rank-one `d_r d_t^H`.
    pub fn spatial_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rx_steering.len(), self.tx_steering.len(), |k, i| {
            self.rx_steering[k] * self.tx_steering[i].conj()
        })
    }

    /// `complex_gain · d_r d_t^H`.
    pub fn amplitude_matrix(&self) -> DMatrix<Complex64> {
        self.spatial_matrix() * self.complex_gain
    }

    pub fn phase(&self, m: usize, n: usize, config: &SystemConfig) -> Complex64 {
        doppler_phase(m, config.symbol_period_s, self.doppler_hz)
            * range_phase(n, config.subcarrier_spacing_hz, self.delay_s)
    }

    pub fn with_gain(&self, g: Complex64) -> Self {
        Self { complex_gain: g, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<PathChannel>,
    pub noise_variance: f64,
}

/// Builds the path of one target with the given small-scale amplitude.
pub fn synthesize_path(target: &Target, config: &SystemConfig, small_scale: f64) -> Result<PathChannel> {
    let lambda = config.wavelength_m;
    let delay = target.bistatic_range_m / config.speed_of_light_m_s;
    let doppler = target.radial_speed_m_s / lambda;
    let amplitude = small_scale
        * large_scale_gain(target.range_tx_leg_m, target.range_rx_leg_m, target.rcs_m2, lambda)?;
    let carrier = Complex64::from_polar(1.0, -2.0 * PI * config.carrier_freq_hz * delay);
    Ok(PathChannel::new(amplitude * carrier, delay, doppler, target.aod_rad, target.aoa_rad, config))
}

/// Paths for all targets with fresh Weibull amplitudes.
pub fn synthesize_paths<R: Rng + ?Sized>(
    targets: &[Target],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<Vec<PathChannel>> {
    targets.iter().map(|t| synthesize_path(t, config, small_scale_gain(rng))).collect()
}

pub fn awgn_variance_for_snr(snr_db: f64, mean_rx_power: f64) -> Result<f64> {
    if !(mean_rx_power > 0.0) {
        return Err(precondition("awgn_variance_for_snr: power must be positive"));
    }
    Ok(mean_rx_power / 10f64.powf(snr_db / 10.0))
}

/// Paths materialized for a fixed grid size: per-path phase tables so that
/// the per-element channel is a handful of multiply-adds.
#[derive(Debug, Clone)]
pub struct ChannelOperator {
    n_tx: usize,
    n_rx: usize,
    symbols: usize,
    subcarriers: usize,
    paths: Vec<MaterializedPath>,
}

#[derive(Debug, Clone)]
struct MaterializedPath {
    gain: Complex64,
    tx_conj: Vec<Complex64>,
    rx: Vec<Complex64>,
    range: Vec<Complex64>,
    doppler: Vec<Complex64>,
}

impl ChannelOperator {
    pub fn new(paths: &[PathChannel], config: &SystemConfig) -> Self {
        let (m_len, n_len) = (config.num_symbols, config.num_subcarriers);
        let paths = paths
            .iter()
            .map(|p| MaterializedPath {
                gain: p.complex_gain,
                tx_conj: p.tx_steering.iter().map(|v| v.conj()).collect(),
                rx: p.rx_steering.clone(),
                range: (0..n_len).map(|n| range_phase(n, config.subcarrier_spacing_hz, p.delay_s)).collect(),
                doppler: (0..m_len).map(|m| doppler_phase(m, config.symbol_period_s, p.doppler_hz)).collect(),
            })
            .collect();
        Self {
            n_tx: config.num_tx_antennas,
            n_rx: config.num_rx_antennas,
            symbols: m_len,
            subcarriers: n_len,
            paths,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    /// `complex_gain · h_φ(m, n)` of path `l`.
    #[inline]
    pub fn path_coefficient(&self, l: usize, m: usize, n: usize) -> Complex64 {
        let p = &self.paths[l];
        p.gain * (p.doppler[m] * p.range[n])
    }

    /// Composite N_r x N_t channel at one resource element, row-major into `out`.
    pub fn composite_into(&self, m: usize, n: usize, out: &mut [Complex64]) {
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (l, p) in self.paths.iter().enumerate() {
            let c = self.path_coefficient(l, m, n);
            for k in 0..self.n_rx {
                let ck = c * p.rx[k];
                for i in 0..self.n_tx {
                    out[k * self.n_tx + i] += ck * p.tx_conj[i];
                }
            }
        }
    }

    pub fn composite(&self, m: usize, n: usize) -> DMatrix<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_rx * self.n_tx];
        self.composite_into(m, n, &mut buf);
        DMatrix::from_row_slice(self.n_rx, self.n_tx, &buf)
    }

    /// Adds `H(m, n) x` to `y`.
    pub fn apply_add(&self, m: usize, n: usize, x: &[Complex64], y: &mut [Complex64]) {
        for (l, p) in self.paths.iter().enumerate() {
            let proj: Complex64 = p.tx_conj.iter().zip(x).map(|(a, b)| a * b).sum();
            let c = self.path_coefficient(l, m, n) * proj;
            for k in 0..self.n_rx {
                y[k] += c * p.rx[k];
            }
        }
    }

    /// Noiseless receive grids for the given transmit grids.
    pub fn apply(&self, tx: &[ResourceGrid]) -> Result<Vec<ResourceGrid>> {
        check_grids(tx, self.n_tx, self.symbols, self.subcarriers)?;
        let mut rx: Vec<ResourceGrid> =
            (0..self.n_rx).map(|k| ResourceGrid::zeros(self.symbols, self.subcarriers, k)).collect();
        let mut x = vec![Complex64::new(0.0, 0.0); self.n_tx];
        let mut y = vec![Complex64::new(0.0, 0.0); self.n_rx];
        for m in 0..self.symbols {
            for n in 0..self.subcarriers {
                for (i, g) in tx.iter().enumerate() {
                    x[i] = g.get(m, n);
                }
                y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                self.apply_add(m, n, &x, &mut y);
                for (k, g) in rx.iter_mut().enumerate() {
                    g.set(m, n, y[k]);
                }
            }
        }
        Ok(rx)
    }
}

pub(crate) fn check_grids(grids: &[ResourceGrid], count: usize, symbols: usize, subcarriers: usize) -> Result<()> {
    if grids.len() != count {
        return Err(Error::Dimension(format!("expected {count} antenna grids, got {}", grids.len())));
    }
    for g in grids {
        if g.dims() != (symbols, subcarriers) {
            return Err(Error::Dimension(format!(
                "grid is {:?}, expected ({symbols}, {subcarriers})",
                g.dims()
            )));
        }
    }
    Ok(())
}

/// Mean per-element power over all receive grids.
pub fn mean_power(grids: &[ResourceGrid]) -> f64 {
    let count: usize = grids.iter().map(|g| g.values().len()).sum();
    if count == 0 {
        return 0.0;
    }
    grids.iter().map(|g| g.energy()).sum::<f64>() / count as f64
}

/// Adds i.i.d. circular complex Gaussian noise of the given variance.
pub fn add_noise<R: Rng + ?Sized>(grids: &mut [ResourceGrid], variance: f64, rng: &mut R) {
    if variance <= 0.0 {
        return;
    }
    let s = (variance / 2.0).sqrt();
    for g in grids.iter_mut() {
        for v in g.values_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(s * re, s * im);
        }
    }
}

/// `y = Σ_l H̃_l x + z` for every resource element.
pub fn apply_channel<R: Rng + ?Sized>(
    tx: &[ResourceGrid],
    realization: &ChannelRealization,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<Vec<ResourceGrid>> {
    let mut rx = ChannelOperator::new(&realization.paths, config).apply(tx)?;
    add_noise(&mut rx, realization.noise_variance, rng);
    Ok(rx)
}
